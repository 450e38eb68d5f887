#include "ltg/dataworld.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "ltg/rng.hpp"

namespace ltg {

namespace {

constexpr std::array<std::string_view, 5> kTemplateNames = {
    "color_category", "position", "color_words", "size_category", "count"};

constexpr double kSmallCharWidth = 0.022;
constexpr double kLargeCharWidth = 0.036;
constexpr double kMinGap = 0.01;

class SceneBuilder {
 public:
  SceneBuilder(const WorldConfig& cfg, std::mt19937_64& rng) : cfg_(cfg), rng_(rng) {}

  std::vector<SceneTextToken>& tokens() { return tokens_; }

  double uniform(double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng_);
  }
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(rng_);
  }
  bool coin(double p) { return std::bernoulli_distribution(p)(rng_); }

  std::string fresh_word(Category cat) {
    for (int tries = 0; tries < 1000; ++tries) {
      std::string w;
      if (cat == Category::Number) {
        w = std::to_string(uniform_int(1, 999));
      } else {
        const auto& words = scene_words();
        w = words[static_cast<std::size_t>(uniform_int(0, static_cast<int>(words.size()) - 1))];
      }
      if (!used_words_.count(w)) {
        used_words_.insert(w);
        return w;
      }
    }
    throw GenerationError("cannot draw a unique scene word");
  }

  BBox size_box(const std::string& word, FontSize fs, double x1, int row) const {
    const double cell = 1.0 / cfg_.grid_size;
    const int rows = fs == FontSize::Small ? 1 : 2;
    const double cw = fs == FontSize::Small ? kSmallCharWidth : kLargeCharWidth;
    const double w = std::max(static_cast<double>(word.size()) * cw + 0.01, 1.2 * cell);
    return BBox{x1, row * cell, x1 + w, (row + rows) * cell};
  }

  double token_width(const std::string& word, FontSize fs) const {
    return size_box(word, fs, 0.0, 0).width();
  }

  bool fits(const BBox& b) const {
    if (!is_valid(b)) return false;
    for (const auto& t : tokens_) {
      const BBox& o = t.box;
      const bool rows_overlap = b.y1 < o.y2 && o.y1 < b.y2;
      if (!rows_overlap) continue;
      if (b.x1 < o.x2 + kMinGap && o.x1 < b.x2 + kMinGap) return false;
    }
    return true;
  }

  /// Tries random positions satisfying `accept`; returns false when exhausted.
  bool place_random(SceneTextToken tok, const std::function<bool(const BBox&)>& accept) {
    const int rows = tok.attributes.font_size == FontSize::Small ? 1 : 2;
    const double w = token_width(tok.word, tok.attributes.font_size);
    if (w > 1.0) return false;
    for (int i = 0; i < 200; ++i) {
      const int row = uniform_int(0, cfg_.grid_size - rows);
      const double x1 = uniform(0.0, 1.0 - w);
      BBox b = size_box(tok.word, tok.attributes.font_size, x1, row);
      if (fits(b) && accept(b)) {
        tok.box = b;
        tokens_.push_back(tok);
        return true;
      }
    }
    return false;
  }

  /// Places next to `anchor`: same band left/right, or the row just above/below.
  bool place_adjacent(SceneTextToken tok, const BBox& anchor,
                      const std::function<bool(const BBox&)>& accept) {
    const int rows = tok.attributes.font_size == FontSize::Small ? 1 : 2;
    const double cell = 1.0 / cfg_.grid_size;
    const double w = token_width(tok.word, tok.attributes.font_size);
    const int anchor_row = static_cast<int>(std::lround(anchor.y1 / cell));
    const int anchor_rows = static_cast<int>(std::lround(anchor.height() / cell));
    for (int i = 0; i < 60; ++i) {
      const int side = uniform_int(0, 3);
      double x1 = 0;
      int row = anchor_row;
      const double gap = uniform(kMinGap + 0.002, 0.035);
      switch (side) {
        case 0: x1 = anchor.x2 + gap; row = anchor_row + uniform_int(1 - rows, anchor_rows - 1); break;
        case 1: x1 = anchor.x1 - gap - w; row = anchor_row + uniform_int(1 - rows, anchor_rows - 1); break;
        case 2: x1 = uniform(anchor.x1 - w * 0.8, anchor.x2 - w * 0.2); row = anchor_row - rows; break;
        default: x1 = uniform(anchor.x1 - w * 0.8, anchor.x2 - w * 0.2); row = anchor_row + anchor_rows; break;
      }
      if (row < 0 || row + rows > cfg_.grid_size) continue;
      if (x1 < 0.0 || x1 + w > 1.0) continue;
      BBox b = size_box(tok.word, tok.attributes.font_size, x1, row);
      if (fits(b) && accept(b)) {
        tok.box = b;
        tokens_.push_back(tok);
        return true;
      }
    }
    return false;
  }

  SceneTextToken make_token(TokenAttributes attrs) {
    return SceneTextToken{fresh_word(attrs.category), BBox{}, attrs};
  }

  Color random_color() { return static_cast<Color>(uniform_int(0, kNumColors - 1)); }
  Color other_color(Color c) {
    Color o = c;
    while (o == c) o = random_color();
    return o;
  }
  Category random_category() { return coin(0.5) ? Category::Number : Category::Word; }
  FontSize random_size() { return coin(0.5) ? FontSize::Small : FontSize::Large; }

 private:
  const WorldConfig& cfg_;
  std::mt19937_64& rng_;
  std::vector<SceneTextToken> tokens_;
  std::set<std::string> used_words_;
};

int region_of(const BBox& b) {
  const double cx = 0.5 * (b.x1 + b.x2);
  const double cy = 0.5 * (b.y1 + b.y2);
  const int col = std::min(2, static_cast<int>(cx * 3.0));
  const int row = std::min(2, static_cast<int>(cy * 3.0));
  return row * 3 + col;
}

struct Draft {
  QuestionTemplate tmpl;
  std::vector<std::string> question;
  std::vector<std::string> answer;
  std::vector<SceneTextToken> tokens;
  int anchor = -1;
};

std::optional<Draft> try_generate(const WorldConfig& cfg, QuestionTemplate tmpl,
                                  bool ambiguous, std::mt19937_64& rng) {
  SceneBuilder sb(cfg, rng);
  const int n_total = sb.uniform_int(cfg.min_tokens, cfg.max_tokens);
  const auto any = [](const BBox&) { return true; };

  TokenAttributes anchor_attrs{sb.random_color(), sb.random_category(), sb.random_size()};
  if (tmpl == QuestionTemplate::ColorWords || tmpl == QuestionTemplate::Count) {
    anchor_attrs.category =
        tmpl == QuestionTemplate::ColorWords ? Category::Word : Category::Number;
  }
  const int target_region = sb.uniform_int(0, 8);

  // A token may join the scene only if the question stays unambiguous.
  auto keeps_answer_unique = [&](const TokenAttributes& a) {
    switch (tmpl) {
      case QuestionTemplate::ColorCategory:
        return !(a.color == anchor_attrs.color && a.category == anchor_attrs.category);
      case QuestionTemplate::SizeCategory:
        return !(a.font_size == anchor_attrs.font_size && a.category == anchor_attrs.category);
      case QuestionTemplate::ColorWords:
        return !(a.color == anchor_attrs.color && a.category == Category::Word);
      default:
        return true;
    }
  };
  auto box_ok = [&](const BBox& b) {
    return tmpl != QuestionTemplate::Position || region_of(b) != target_region;
  };

  // Anchor (and, for phrases, its companions).
  std::vector<std::string> answer;
  if (tmpl == QuestionTemplate::ColorWords) {
    const int len = sb.uniform_int(2, 3);
    SceneTextToken first = sb.make_token(anchor_attrs);
    if (!sb.place_random(first, any)) return std::nullopt;
    answer.push_back(first.word);
    for (int k = 1; k < len; ++k) {
      SceneTextToken next = sb.make_token(anchor_attrs);
      const BBox& prev = sb.tokens().back().box;
      const double w = sb.token_width(next.word, anchor_attrs.font_size);
      const double x1 = prev.x2 + sb.uniform(kMinGap + 0.002, 0.025);
      if (x1 + w > 1.0) return std::nullopt;
      BBox b{x1, prev.y1, x1 + w, prev.y2};
      if (!sb.fits(b)) return std::nullopt;
      next.box = b;
      sb.tokens().push_back(next);
      answer.push_back(next.word);
    }
  } else {
    SceneTextToken t = sb.make_token(anchor_attrs);
    auto in_region = [&](const BBox& b) {
      return tmpl != QuestionTemplate::Position || region_of(b) == target_region;
    };
    if (!sb.place_random(t, in_region)) return std::nullopt;
    answer.push_back(t.word);
  }
  const int anchor = 0;
  const BBox anchor_box = sb.tokens()[anchor].box;

  if (ambiguous) {
    TokenAttributes color_d{anchor_attrs.color,
                            anchor_attrs.category == Category::Number ? Category::Word
                                                                      : Category::Number,
                            sb.random_size()};
    TokenAttributes cat_d{sb.other_color(anchor_attrs.color), anchor_attrs.category,
                          sb.random_size()};
    if (tmpl == QuestionTemplate::SizeCategory)
      cat_d.font_size = anchor_attrs.font_size == FontSize::Small ? FontSize::Large
                                                                  : FontSize::Small;
    for (const auto& attrs : {color_d, cat_d}) {
      if (!keeps_answer_unique(attrs)) return std::nullopt;
      if (!sb.place_adjacent(sb.make_token(attrs), anchor_box, box_ok)) return std::nullopt;
    }
  }

  while (static_cast<int>(sb.tokens().size()) < n_total) {
    TokenAttributes a{sb.random_color(), sb.random_category(), sb.random_size()};
    if (!ambiguous && tmpl != QuestionTemplate::Count) {
      if (a.color == anchor_attrs.color) continue;
    }
    if (!keeps_answer_unique(a)) continue;
    if (!sb.place_random(sb.make_token(a), box_ok)) return std::nullopt;
  }

  Draft d;
  d.tmpl = tmpl;
  d.tokens = sb.tokens();
  d.anchor = anchor;
  const std::string color{to_string(anchor_attrs.color)};
  const std::string cat{to_string(anchor_attrs.category)};
  switch (tmpl) {
    case QuestionTemplate::ColorCategory:
      d.question = {"what", "is", "the", cat, "in", color, "?"};
      d.answer = answer;
      break;
    case QuestionTemplate::Position: {
      d.question = {"what", "is", "written", "at", "the"};
      for (const auto& w : position_phrases()[static_cast<std::size_t>(target_region)])
        d.question.push_back(w);
      d.question.push_back("?");
      d.answer = answer;
      break;
    }
    case QuestionTemplate::ColorWords:
      d.question = {"what", "are", "the", color, "words", "?"};
      d.answer = answer;
      break;
    case QuestionTemplate::SizeCategory:
      d.question = {"what", "is", "the", std::string(to_string(anchor_attrs.font_size)), cat, "?"};
      d.answer = answer;
      break;
    case QuestionTemplate::Count: {
      const auto numbers = std::count_if(d.tokens.begin(), d.tokens.end(), [](const auto& t) {
        return t.attributes.category == Category::Number;
      });
      if (numbers < 1 || numbers > 10) return std::nullopt;
      d.question = {"how", "many", "numbers", "are", "there", "?"};
      d.answer = {count_words()[static_cast<std::size_t>(numbers - 1)]};
      break;
    }
  }
  return d;
}

std::vector<std::string> gold_answers(const std::vector<std::string>& answer,
                                      std::mt19937_64& rng) {
  std::string canonical;
  for (std::size_t i = 0; i < answer.size(); ++i) {
    if (i) canonical += ' ';
    canonical += answer[i];
  }
  std::vector<std::string> golds(8, canonical);
  // One annotator typo: a single substituted character in one word.
  std::vector<std::string> typo_words = answer;
  const auto wi = std::uniform_int_distribution<std::size_t>(0, typo_words.size() - 1)(rng);
  std::string& w = typo_words[wi];
  const auto ci = std::uniform_int_distribution<std::size_t>(0, w.size() - 1)(rng);
  const bool digit = w[ci] >= '0' && w[ci] <= '9';
  const int range = digit ? 10 : 26;
  const char base = digit ? '0' : 'a';
  char c = w[ci];
  while (c == w[ci]) c = static_cast<char>(base + std::uniform_int_distribution<int>(0, range - 1)(rng));
  w[ci] = c;
  std::string typo;
  for (std::size_t i = 0; i < typo_words.size(); ++i) {
    if (i) typo += ' ';
    typo += typo_words[i];
  }
  golds.push_back(typo);
  golds.push_back("the " + canonical);
  return golds;
}

void validate(const WorldConfig& c) {
  auto fail = [](const std::string& m) { throw GenerationError("invalid world config: " + m); };
  if (c.n_train < 0 || c.n_test < 0) fail("split sizes must be non-negative");
  if (c.grid_size < 3) fail("grid_size must be >= 3");
  if (c.min_tokens < 5) fail("min_tokens must be >= 5 (phrase plus two distractors)");
  if (c.max_tokens < c.min_tokens) fail("max_tokens < min_tokens");
  if (c.ambiguity_fraction < 0.0 || c.ambiguity_fraction > 1.0)
    fail("ambiguity_fraction outside [0,1]");
  if (c.templates.empty()) fail("no templates");
  if (c.templates.size() != c.template_weights.size())
    fail("templates and template_weights differ in length");
  for (double w : c.template_weights)
    if (!(w >= 0.0)) fail("negative template weight");
  if (c.max_attempts < 1) fail("max_attempts must be >= 1");
}

}  // namespace

std::string_view to_string(QuestionTemplate t) {
  return kTemplateNames[static_cast<std::size_t>(t)];
}

QuestionTemplate parse_template(std::string_view s) {
  for (std::size_t i = 0; i < kTemplateNames.size(); ++i)
    if (kTemplateNames[i] == s) return static_cast<QuestionTemplate>(i);
  throw std::invalid_argument("unknown template: " + std::string(s));
}

bool requires_copy(QuestionTemplate t) { return t != QuestionTemplate::Count; }

VisualGrid render_grid(const std::vector<SceneTextToken>& tokens, int grid_size) {
  VisualGrid g;
  g.size = grid_size;
  g.features = kCellFeatures;
  g.values.assign(static_cast<std::size_t>(grid_size) * grid_size * kCellFeatures, 0.0);
  for (const auto& t : tokens) {
    for (int r = 0; r < grid_size; ++r) {
      const double cy = (r + 0.5) / grid_size;
      if (cy < t.box.y1 || cy > t.box.y2) continue;
      for (int c = 0; c < grid_size; ++c) {
        const double cx = (c + 0.5) / grid_size;
        if (cx < t.box.x1 || cx > t.box.x2) continue;
        g.at(r, c, static_cast<int>(t.attributes.color)) = 1.0;
        g.at(r, c, kNumColors + static_cast<int>(t.attributes.category)) = 1.0;
        g.at(r, c, kNumColors + kNumCategories + static_cast<int>(t.attributes.font_size)) = 1.0;
        g.at(r, c, kCellFeatures - 1) = 1.0;
      }
    }
  }
  return g;
}

std::optional<TokenAttributes> decode_cell(const VisualGrid& grid, int row, int col) {
  if (grid.at(row, col, kCellFeatures - 1) < 0.5) return std::nullopt;
  auto argmax = [&](int offset, int n) {
    int best = 0;
    for (int i = 1; i < n; ++i)
      if (grid.at(row, col, offset + i) > grid.at(row, col, offset + best)) best = i;
    return best;
  };
  TokenAttributes a;
  a.color = static_cast<Color>(argmax(0, kNumColors));
  a.category = static_cast<Category>(argmax(kNumColors, kNumCategories));
  a.font_size = static_cast<FontSize>(argmax(kNumColors + kNumCategories, kNumSizes));
  return a;
}

std::vector<int> reading_order(const std::vector<SceneTextToken>& tokens) {
  std::vector<int> order(tokens.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const BBox& ba = tokens[static_cast<std::size_t>(a)].box;
    const BBox& bb = tokens[static_cast<std::size_t>(b)].box;
    if (ba.y1 != bb.y1) return ba.y1 < bb.y1;
    return ba.x1 < bb.x1;
  });
  return order;
}

SceneInstance generate_instance(const WorldConfig& config, std::uint64_t seed,
                                const std::string& id) {
  validate(config);
  std::mt19937_64 rng(seed);
  std::discrete_distribution<int> pick(config.template_weights.begin(),
                                       config.template_weights.end());
  const QuestionTemplate tmpl = config.templates[static_cast<std::size_t>(pick(rng))];
  const bool ambiguous = std::bernoulli_distribution(config.ambiguity_fraction)(rng);
  for (int attempt = 0; attempt < config.max_attempts; ++attempt) {
    auto draft = try_generate(config, tmpl, ambiguous, rng);
    if (!draft) continue;
    // Shuffle OCR order so token index carries no layout information.
    std::vector<int> perm(draft->tokens.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    std::shuffle(perm.begin(), perm.end(), rng);
    SceneInstance s;
    s.id = id;
    s.template_name = std::string(to_string(tmpl));
    s.question = draft->question;
    for (int p : perm) s.tokens.push_back(draft->tokens[static_cast<std::size_t>(p)]);
    s.anchor = static_cast<int>(std::find(perm.begin(), perm.end(), draft->anchor) - perm.begin());
    s.visual_grid = render_grid(s.tokens, config.grid_size);
    s.answer_tokens = draft->answer;
    s.answers = gold_answers(draft->answer, rng);
    return s;
  }
  std::ostringstream msg;
  msg << "cannot place " << config.min_tokens << ".." << config.max_tokens
      << " tokens without overlap (pairwise IoU < 0.1) on a " << config.grid_size << "x"
      << config.grid_size << " grid after " << config.max_attempts << " attempts";
  throw GenerationError(msg.str());
}

Dataset generate_dataset(const WorldConfig& config, std::uint64_t seed) {
  validate(config);
  Dataset d;
  d.config = config;
  d.seed = seed;
  auto make = [&](const std::string& split, int n, std::uint64_t tag) {
    std::vector<SceneInstance> out;
    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      char id[32];
      std::snprintf(id, sizeof(id), "%s-%05d", split.c_str(), i);
      out.push_back(generate_instance(config, derive_seed(seed, tag, static_cast<std::uint64_t>(i)), id));
    }
    return out;
  };
  d.train = make("train", config.n_train, 1);
  d.test = make("test", config.n_test, 2);
  return d;
}

// ---------------------------------------------------------------------------
// Corruption

void validate(const CorruptionSpec& spec) {
  if (!(spec.char_sub_rate >= 0.0 && spec.char_sub_rate <= 1.0))
    throw std::invalid_argument("char_sub_rate outside [0,1]");
  if (!(spec.word_drop_rate >= 0.0 && spec.word_drop_rate <= 1.0))
    throw std::invalid_argument("word_drop_rate outside [0,1]");
}

std::string corrupt_word(const std::string& word, double rate, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution flip(rate);
  std::string out = word;
  for (char& c : out) {
    if (!flip(rng)) continue;
    const bool digit = c >= '0' && c <= '9';
    const bool letter = c >= 'a' && c <= 'z';
    if (!digit && !letter) continue;
    const int range = digit ? 10 : 26;
    const char base = digit ? '0' : 'a';
    const int shift = std::uniform_int_distribution<int>(1, range - 1)(rng);
    c = static_cast<char>(base + (c - base + shift) % range);
  }
  return out;
}

SceneInstance corrupt_ocr(const SceneInstance& scene, const CorruptionSpec& spec) {
  validate(spec);
  const std::uint64_t base = derive_seed(spec.seed, hash_string(scene.id), 0);
  std::mt19937_64 rng(base);
  std::bernoulli_distribution drop(spec.word_drop_rate);
  std::set<std::string> answer_words(scene.answer_tokens.begin(), scene.answer_tokens.end());

  SceneInstance out = scene;
  out.tokens.clear();
  out.anchor = -1;
  for (std::size_t i = 0; i < scene.tokens.size(); ++i) {
    const auto& t = scene.tokens[i];
    const bool in_scope = spec.scope == CorruptionScope::AllTokens || answer_words.count(t.word);
    const bool dropped = drop(rng);
    const std::uint64_t word_seed = rng();
    if (in_scope && dropped) continue;
    SceneTextToken c = t;
    if (in_scope) c.word = corrupt_word(t.word, spec.char_sub_rate, word_seed);
    if (static_cast<int>(i) == scene.anchor) out.anchor = static_cast<int>(out.tokens.size());
    out.tokens.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentation

namespace {

bool all_digits(const std::string& w) {
  return !w.empty() && std::all_of(w.begin(), w.end(), [](char c) { return c >= '0' && c <= '9'; });
}

const std::map<std::size_t, std::vector<std::string>>& scene_words_by_length() {
  static const auto table = [] {
    std::map<std::size_t, std::vector<std::string>> t;
    for (const auto& w : scene_words()) t[w.size()].push_back(w);
    return t;
  }();
  return table;
}

std::optional<Color> color_word(const std::string& w) {
  for (int c = 0; c < kNumColors; ++c)
    if (to_string(static_cast<Color>(c)) == w) return static_cast<Color>(c);
  return std::nullopt;
}

}  // namespace

SceneInstance augment_scene(const SceneInstance& scene, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto below = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

  std::array<int, kNumColors> perm{};
  for (int c = 0; c < kNumColors; ++c) perm[static_cast<std::size_t>(c)] = c;
  for (std::size_t i = perm.size(); i > 1; --i) std::swap(perm[i - 1], perm[below(i)]);

  std::set<std::string> used;
  for (const auto& t : scene.tokens) used.insert(t.word);
  std::map<std::string, std::string> rename;
  for (const auto& t : scene.tokens) {
    if (rename.count(t.word)) continue;
    std::string fresh = t.word;
    for (int tries = 0; tries < 50; ++tries) {
      std::string cand;
      if (all_digits(t.word)) {
        const std::size_t n = t.word.size();
        const int lo = n == 1 ? 1 : static_cast<int>(std::pow(10, n - 1));
        const int hi = static_cast<int>(std::pow(10, n)) - 1;
        cand = std::to_string(lo + static_cast<int>(below(static_cast<std::size_t>(hi - lo + 1))));
      } else {
        const auto it = scene_words_by_length().find(t.word.size());
        if (it == scene_words_by_length().end()) break;
        cand = it->second[below(it->second.size())];
      }
      if (!used.count(cand)) {
        fresh = cand;
        break;
      }
    }
    used.insert(fresh);
    rename[t.word] = fresh;
  }
  auto map_word = [&](const std::string& w) {
    const auto it = rename.find(w);
    return it == rename.end() ? w : it->second;
  };

  SceneInstance out = scene;
  for (auto& t : out.tokens) {
    t.word = map_word(t.word);
    t.attributes.color = static_cast<Color>(perm[static_cast<std::size_t>(t.attributes.color)]);
  }
  for (auto& w : out.question)
    if (auto c = color_word(w)) w = std::string(to_string(static_cast<Color>(perm[static_cast<std::size_t>(*c)])));
  if (requires_copy(parse_template(scene.template_name))) {
    for (auto& w : out.answer_tokens) w = map_word(w);
    for (auto& a : out.answers) {
      std::istringstream words(a);
      std::string w, rebuilt;
      while (words >> w) rebuilt += (rebuilt.empty() ? "" : " ") + map_word(w);
      a = rebuilt;
    }
  }
  out.visual_grid = render_grid(out.tokens, scene.visual_grid.size);
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

DatasetFormatError::DatasetFormatError(const std::string& path, std::size_t line,
                                       const std::string& what)
    : std::runtime_error(path + ":" + std::to_string(line) + ": " + what), line_(line) {}

nlohmann::json to_json(const WorldConfig& c) {
  nlohmann::json templates = nlohmann::json::array();
  for (auto t : c.templates) templates.push_back(std::string(to_string(t)));
  return {{"n_train", c.n_train},
          {"n_test", c.n_test},
          {"grid_size", c.grid_size},
          {"min_tokens", c.min_tokens},
          {"max_tokens", c.max_tokens},
          {"ambiguity_fraction", c.ambiguity_fraction},
          {"templates", templates},
          {"template_weights", c.template_weights},
          {"max_attempts", c.max_attempts}};
}

WorldConfig world_config_from_json(const nlohmann::json& j) {
  WorldConfig c;
  if (!j.is_object()) throw std::invalid_argument("world config: expected an object");
  const nlohmann::json known = to_json(c);
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw std::invalid_argument("unknown world config key '" + k + "'");
  c.n_train = j.value("n_train", c.n_train);
  c.n_test = j.value("n_test", c.n_test);
  c.grid_size = j.value("grid_size", c.grid_size);
  c.min_tokens = j.value("min_tokens", c.min_tokens);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.ambiguity_fraction = j.value("ambiguity_fraction", c.ambiguity_fraction);
  if (j.contains("templates")) {
    c.templates.clear();
    for (const auto& t : j.at("templates")) c.templates.push_back(parse_template(t.get<std::string>()));
  }
  if (j.contains("template_weights"))
    c.template_weights = j.at("template_weights").get<std::vector<double>>();
  c.max_attempts = j.value("max_attempts", c.max_attempts);
  return c;
}

nlohmann::json to_json(const SceneInstance& s) {
  nlohmann::json tokens = nlohmann::json::array();
  for (const auto& t : s.tokens) {
    tokens.push_back({{"word", t.word},
                      {"box", {t.box.x1, t.box.y1, t.box.x2, t.box.y2}},
                      {"color", std::string(to_string(t.attributes.color))},
                      {"category", std::string(to_string(t.attributes.category))},
                      {"font_size", std::string(to_string(t.attributes.font_size))}});
  }
  nlohmann::json cells = nlohmann::json::array();
  const auto& g = s.visual_grid;
  for (int r = 0; r < g.size; ++r) {
    for (int c = 0; c < g.size; ++c) {
      bool nonzero = false;
      std::vector<double> f(static_cast<std::size_t>(g.features));
      for (int k = 0; k < g.features; ++k) {
        f[static_cast<std::size_t>(k)] = g.at(r, c, k);
        nonzero = nonzero || f[static_cast<std::size_t>(k)] != 0.0;
      }
      if (nonzero) cells.push_back({r * g.size + c, f});
    }
  }
  return {{"id", s.id},
          {"template", s.template_name},
          {"question", s.question},
          {"tokens", tokens},
          {"visual_grid", {{"size", g.size}, {"features", g.features}, {"cells", cells}}},
          {"answers", s.answers},
          {"answer_tokens", s.answer_tokens},
          {"anchor", s.anchor}};
}

SceneInstance scene_from_json(const nlohmann::json& j) {
  SceneInstance s;
  s.id = j.at("id").get<std::string>();
  s.template_name = j.at("template").get<std::string>();
  parse_template(s.template_name);
  s.question = j.at("question").get<std::vector<std::string>>();
  for (const auto& t : j.at("tokens")) {
    SceneTextToken tok;
    tok.word = t.at("word").get<std::string>();
    if (tok.word.empty()) throw std::invalid_argument("empty token word");
    const auto b = t.at("box").get<std::vector<double>>();
    if (b.size() != 4) throw std::invalid_argument("box needs 4 coordinates");
    tok.box = make_box(b[0], b[1], b[2], b[3]);
    tok.attributes.color = parse_color(t.at("color").get<std::string>());
    tok.attributes.category = parse_category(t.at("category").get<std::string>());
    tok.attributes.font_size = parse_font_size(t.at("font_size").get<std::string>());
    s.tokens.push_back(std::move(tok));
  }
  const auto& vg = j.at("visual_grid");
  s.visual_grid.size = vg.at("size").get<int>();
  s.visual_grid.features = vg.at("features").get<int>();
  if (s.visual_grid.size <= 0 || s.visual_grid.features <= 0)
    throw std::invalid_argument("bad visual_grid shape");
  s.visual_grid.values.assign(
      static_cast<std::size_t>(s.visual_grid.size) * s.visual_grid.size * s.visual_grid.features, 0.0);
  for (const auto& cell : vg.at("cells")) {
    const int idx = cell.at(0).get<int>();
    const auto f = cell.at(1).get<std::vector<double>>();
    if (idx < 0 || idx >= s.visual_grid.size * s.visual_grid.size ||
        static_cast<int>(f.size()) != s.visual_grid.features)
      throw std::invalid_argument("bad visual_grid cell");
    for (int k = 0; k < s.visual_grid.features; ++k)
      s.visual_grid.values[static_cast<std::size_t>(idx) * s.visual_grid.features + k] = f[static_cast<std::size_t>(k)];
  }
  s.answers = j.at("answers").get<std::vector<std::string>>();
  s.answer_tokens = j.at("answer_tokens").get<std::vector<std::string>>();
  s.anchor = j.at("anchor").get<int>();
  return s;
}

void save_split(const std::filesystem::path& path, const WorldConfig& config,
                std::uint64_t seed, const std::string& split,
                const std::vector<SceneInstance>& instances) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  nlohmann::json header = {{"schema_version", kDatasetSchemaVersion},
                           {"kind", "ltg-dataset"},
                           {"split", split},
                           {"seed", seed},
                           {"world_config", to_json(config)}};
  out << header.dump() << '\n';
  for (const auto& s : instances) out << to_json(s).dump() << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

SplitFile load_split(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open dataset file " + path.string());
  const std::string p = path.string();
  SplitFile f;
  std::string line;
  std::size_t lineno = 0;
  if (!std::getline(in, line)) throw DatasetFormatError(p, 1, "missing header record");
  ++lineno;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const std::exception& e) {
    throw DatasetFormatError(p, lineno, std::string("malformed header: ") + e.what());
  }
  if (!header.is_object() || !header.contains("schema_version"))
    throw DatasetFormatError(p, lineno, "header lacks schema_version");
  const int version = header.at("schema_version").get<int>();
  if (version != kDatasetSchemaVersion)
    throw DatasetFormatError(p, lineno,
                             "unsupported schema_version " + std::to_string(version) +
                                 " (expected " + std::to_string(kDatasetSchemaVersion) + ")");
  try {
    f.config = world_config_from_json(header.at("world_config"));
    f.seed = header.at("seed").get<std::uint64_t>();
    f.split = header.value("split", std::string());
  } catch (const std::exception& e) {
    throw DatasetFormatError(p, lineno, std::string("bad header: ") + e.what());
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      f.instances.push_back(scene_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw DatasetFormatError(p, lineno, std::string("malformed record: ") + e.what());
    }
  }
  return f;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& d) {
  std::filesystem::create_directories(dir);
  save_split(dir / "train.jsonl", d.config, d.seed, "train", d.train);
  save_split(dir / "test.jsonl", d.config, d.seed, "test", d.test);
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  SplitFile train = load_split(dir / "train.jsonl");
  SplitFile test = load_split(dir / "test.jsonl");
  d.config = train.config;
  d.seed = train.seed;
  d.train = std::move(train.instances);
  d.test = std::move(test.instances);
  return d;
}

}  // namespace ltg
