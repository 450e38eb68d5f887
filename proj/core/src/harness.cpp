#include "ltg/harness.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "ltg/checkpoint.hpp"
#include "ltg/preprocess.hpp"
#include "ltg/rng.hpp"

namespace ltg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Seed tags keep every random stream independent of the others.
enum : std::uint64_t {
  kTagAlmInit = 11,
  kTagAlmShuffle = 12,
  kTagAlmAugment = 13,
  kTagAgmInit = 21,
  kTagAgmShuffle = 22,
  kTagAgmNoise = 23,
  kTagAugment = 24,
  kTagLexicon = 25,
  kTagDenoiseSplit = 31,
  kTagGradcheck = 41,
};

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::size_t below(std::mt19937_64& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[below(rng, i)]);
  return p;
}

std::vector<nn::Mat> snapshot(const nn::ParamStore& ps) {
  std::vector<nn::Mat> s;
  s.reserve(ps.entries().size());
  for (const auto& e : ps.entries()) s.push_back(e.value);
  return s;
}

void restore(nn::ParamStore& ps, const std::vector<nn::Mat>& s) {
  auto& es = ps.entries();
  for (std::size_t i = 0; i < es.size(); ++i) es[i].value = s[i];
}

void scale_grads(nn::ParamStore& ps, double k) {
  for (auto& e : ps.entries()) e.grad *= k;
}

struct Split {
  std::vector<const SceneInstance*> train;
  std::vector<const SceneInstance*> val;
};

Split split_tail(const std::vector<SceneInstance>& all, double val_fraction) {
  Split s;
  std::size_t n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(all.size())));
  if (n_val >= all.size()) n_val = 0;
  for (std::size_t i = 0; i < all.size(); ++i)
    (i + n_val < all.size() ? s.train : s.val).push_back(&all[i]);
  return s;
}

std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

std::vector<std::string> selection_words(const Selection& sel) {
  std::vector<std::string> out;
  for (const auto& [i, w] : sel) out.push_back(w);
  return out;
}

void check_keys(const json& j, const json& defaults, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!defaults.contains(it.key()))
      throw std::invalid_argument("unknown config key '" + (where.empty() ? "" : where + ".") +
                                  it.key() + "'");
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

json to_json(const AlmTrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"val_fraction", c.val_fraction},
          {"max_steps", c.max_steps},
          {"optimizer", to_json(c.optimizer)},
          {"augment_prob", c.augment_prob}};
}

json to_json(const AgmTrainConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"val_fraction", c.val_fraction},
          {"max_steps", c.max_steps},
          {"optimizer", to_json(c.optimizer)},
          {"selection", std::string(to_string(c.selection))},
          {"gold_fraction", c.gold_fraction},
          {"gold_drop_rate", c.gold_drop_rate},
          {"distractor_rate", c.distractor_rate},
          {"augment_fraction", c.augment_fraction},
          {"augment_char_sub_rate", c.augment_char_sub_rate},
          {"augment_prob", c.augment_prob},
          {"lexicon_examples", c.lexicon_examples}};
}

json to_json(const PipelineConfig& c) {
  return {{"model", to_json(c.model)},
          {"alm_loss", to_json(c.alm_loss)},
          {"agm", to_json(c.agm)},
          {"alm_train", to_json(c.alm_train)},
          {"agm_train", to_json(c.agm_train)},
          {"decode", {{"beam_size", c.decode.beam_size}, {"max_len", c.decode.max_len}}},
          {"anls_threshold", c.anls_threshold}};
}

namespace {
void validate_common(int epochs, int batch, double val_fraction, const std::string& where) {
  if (epochs < 1 || batch < 1) throw std::invalid_argument(where + ": epochs and batch_size must be >= 1");
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw std::invalid_argument(where + ": val_fraction must be in [0, 1)");
}
bool is_rate(double r) { return r >= 0.0 && r <= 1.0; }
}  // namespace

AlmTrainConfig alm_train_config_from_json(const json& j) {
  AlmTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.max_steps = j.value("max_steps", c.max_steps);
  if (j.contains("optimizer")) c.optimizer = optimizer_config_from_json(j.at("optimizer"));
  c.augment_prob = j.value("augment_prob", c.augment_prob);
  validate_common(c.epochs, c.batch_size, c.val_fraction, "alm_train");
  if (!is_rate(c.augment_prob)) throw std::invalid_argument("alm_train: augment_prob must be in [0, 1]");
  return c;
}

AgmTrainConfig agm_train_config_from_json(const json& j) {
  AgmTrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.max_steps = j.value("max_steps", c.max_steps);
  if (j.contains("optimizer")) c.optimizer = optimizer_config_from_json(j.at("optimizer"));
  if (j.contains("selection")) c.selection = parse_selection_source(j.at("selection").get<std::string>());
  c.gold_fraction = j.value("gold_fraction", c.gold_fraction);
  c.gold_drop_rate = j.value("gold_drop_rate", c.gold_drop_rate);
  c.distractor_rate = j.value("distractor_rate", c.distractor_rate);
  c.augment_fraction = j.value("augment_fraction", c.augment_fraction);
  c.augment_char_sub_rate = j.value("augment_char_sub_rate", c.augment_char_sub_rate);
  c.augment_prob = j.value("augment_prob", c.augment_prob);
  c.lexicon_examples = j.value("lexicon_examples", c.lexicon_examples);
  validate_common(c.epochs, c.batch_size, c.val_fraction, "agm_train");
  if (c.lexicon_examples < 0) throw std::invalid_argument("agm_train: lexicon_examples must be >= 0");
  for (double r : {c.gold_fraction, c.gold_drop_rate, c.distractor_rate, c.augment_fraction,
                   c.augment_char_sub_rate, c.augment_prob})
    if (!is_rate(r)) throw std::invalid_argument("agm_train: rates and fractions must be in [0, 1]");
  return c;
}

PipelineConfig pipeline_config_from_json(const json& j) {
  const PipelineConfig d;
  const json defaults = to_json(d);
  check_keys(j, defaults, "");
  for (const char* k : {"model", "alm_loss", "agm", "alm_train", "agm_train", "decode"})
    if (j.contains(k)) check_keys(j.at(k), defaults.at(k), k);
  for (const char* k : {"alm_train", "agm_train"})
    if (j.contains(k) && j.at(k).contains("optimizer"))
      check_keys(j.at(k).at("optimizer"), defaults.at(k).at("optimizer"), std::string(k) + ".optimizer");
  PipelineConfig c;
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("alm_loss")) c.alm_loss = alm_loss_config_from_json(j.at("alm_loss"));
  if (j.contains("agm")) c.agm = agm_config_from_json(j.at("agm"));
  if (j.contains("alm_train")) c.alm_train = alm_train_config_from_json(j.at("alm_train"));
  if (j.contains("agm_train")) c.agm_train = agm_train_config_from_json(j.at("agm_train"));
  if (j.contains("decode")) {
    c.decode.beam_size = j.at("decode").value("beam_size", c.decode.beam_size);
    c.decode.max_len = j.at("decode").value("max_len", c.decode.max_len);
    if (c.decode.beam_size < 1 || c.decode.max_len < 1)
      throw std::invalid_argument("decode: beam_size and max_len must be >= 1");
  }
  c.anls_threshold = j.value("anls_threshold", c.anls_threshold);
  if (!is_rate(c.anls_threshold)) throw std::invalid_argument("anls_threshold must be in [0, 1]");
  return c;
}

void apply_overrides(json& j, const std::vector<std::string>& overrides) {
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::invalid_argument("override '" + o + "' is not of the form key=value");
    const std::string key = o.substr(0, eq);
    const std::string raw = o.substr(eq + 1);
    json value;
    try {
      value = json::parse(raw);
    } catch (const json::parse_error&) {
      value = raw;
    }
    json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw std::invalid_argument("override '" + o + "' has an empty key segment");
      if (!node->is_object()) *node = json::object();
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      start = dot + 1;
    }
  }
}

// ---------------------------------------------------------------------------
// Filesystem helpers

fs::path resolve_output(const fs::path& p) {
  if (p.is_absolute()) return p;
  if (const char* root = std::getenv("LTG_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
  return p;
}

DirLock::DirLock(const fs::path& dir) : path_(dir / ".lock") {
  fs::create_directories(dir);
  // Exclusive create: fails when another run holds the directory.
  std::FILE* f = std::fopen(path_.c_str(), "wx");
  if (!f) throw LockError("directory is locked by another run: " + path_.string());
  std::fclose(f);
}

DirLock::~DirLock() {
  std::error_code ec;
  fs::remove(path_, ec);
}

void append_jsonl(const fs::path& path, const json& record) {
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw std::runtime_error("cannot append to " + path.string());
  out << record.dump() << '\n';
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_alm(const fs::path& path, const AlmModel& m) {
  save_checkpoint(path, "ltg-alm",
                  {{"model", to_json(m.model_config())}, {"alm_loss", to_json(m.loss_config())}},
                  m.params());
}

std::unique_ptr<AlmModel> load_alm(const fs::path& path) {
  const json h = read_checkpoint_header(path, "ltg-alm");
  auto m = std::make_unique<AlmModel>(model_config_from_json(h.at("config").at("model")),
                                      alm_loss_config_from_json(h.at("config").at("alm_loss")), 0);
  load_checkpoint_params(path, m->params());
  return m;
}

void save_agm(const fs::path& path, const AgmModel& m, SelectionSource trained_on) {
  save_checkpoint(path, "ltg-agm",
                  {{"agm", to_json(m.config())}, {"selection", std::string(to_string(trained_on))}},
                  m.params());
}

std::unique_ptr<AgmModel> load_agm(const fs::path& path) {
  const json h = read_checkpoint_header(path, "ltg-agm");
  auto m = std::make_unique<AgmModel>(agm_config_from_json(h.at("config").at("agm")), 0);
  load_checkpoint_params(path, m->params());
  return m;
}

// ---------------------------------------------------------------------------
// Training

json to_json(const AlmEpochRecord& r) {
  return {{"epoch", r.epoch},
          {"steps", r.steps},
          {"lr", r.lr},
          {"loss", r.loss},
          {"loss_bbox", r.loss_bbox},
          {"loss_s", r.loss_s},
          {"val_selection_f1", r.val_selection_f1},
          {"val_mean_iou", r.val_mean_iou}};
}

json to_json(const AgmEpochRecord& r) {
  return {{"epoch", r.epoch},
          {"steps", r.steps},
          {"lr", r.lr},
          {"loss", r.loss},
          {"gold_selection", r.gold_selection},
          {"val_exact_match", r.val_exact_match}};
}

LocatorScore score_locator(AlmModel& alm, const std::vector<SceneInstance>& scenes) {
  LocatorScore s;
  std::size_t n = 0;
  for (const auto& scene : scenes) {
    const AlmTargets t = build_targets(scene.answer_tokens, scene.tokens);
    if (t.matched.empty()) continue;
    const AlmOutput out = alm.predict(scene);
    std::size_t hit = 0;
    for (const auto& [i, w] : out.selected) hit += t.matched.count(i);
    const double denom = static_cast<double>(out.selected.size() + t.matched.size());
    s.selection_f1 += denom > 0 ? 2.0 * static_cast<double>(hit) / denom : 0.0;
    s.mean_iou += iou(out.b_p, t.answer_box);
    ++n;
  }
  if (n) {
    s.selection_f1 /= static_cast<double>(n);
    s.mean_iou /= static_cast<double>(n);
  }
  return s;
}

namespace {

std::vector<SceneInstance> copy_scenes(const std::vector<const SceneInstance*>& ptrs) {
  std::vector<SceneInstance> out;
  out.reserve(ptrs.size());
  for (const auto* p : ptrs) out.push_back(*p);
  return out;
}

long total_steps(std::size_t n, int batch, int epochs, long max_steps) {
  const long per_epoch = static_cast<long>((n + static_cast<std::size_t>(batch) - 1) / static_cast<std::size_t>(batch));
  const long total = per_epoch * epochs;
  return max_steps > 0 ? std::min(total, max_steps) : total;
}

}  // namespace

AlmTrainResult train_alm(const std::vector<SceneInstance>& train, const PipelineConfig& cfg,
                         std::uint64_t seed, const std::optional<fs::path>& out_dir) {
  const AlmTrainConfig& tc = cfg.alm_train;
  const Split split = split_tail(train, tc.val_fraction);
  if (split.train.empty()) throw std::invalid_argument("train_alm: no training instances");
  const std::vector<SceneInstance> val = copy_scenes(split.val);
  std::vector<AlmTargets> targets;
  targets.reserve(split.train.size());
  for (const auto* s : split.train) targets.push_back(build_targets(s->answer_tokens, s->tokens));

  std::unique_ptr<DirLock> lock;
  fs::path log_path;
  if (out_dir) {
    lock = std::make_unique<DirLock>(*out_dir);
    log_path = *out_dir / "alm_log.jsonl";
    fs::remove(log_path);
  }

  AlmTrainResult result;
  result.model = std::make_unique<AlmModel>(cfg.model, cfg.alm_loss, derive_seed(seed, kTagAlmInit, 0));
  AlmModel& model = *result.model;
  Optimizer opt(tc.optimizer, model.params());
  const long total = total_steps(split.train.size(), tc.batch_size, tc.epochs, tc.max_steps);
  long step = 0;
  std::vector<nn::Mat> best = snapshot(model.params());
  LocatorScore best_score{-1.0, -1.0};

  for (int epoch = 1; epoch <= tc.epochs && step < total; ++epoch) {
    const std::vector<nn::Mat> last_good = snapshot(model.params());
    const auto order = permutation(split.train.size(), derive_seed(seed, kTagAlmShuffle, static_cast<std::uint64_t>(epoch)));
    AlmEpochRecord rec;
    rec.epoch = epoch;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size() && step < total; b += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(tc.batch_size));
      model.params().zero_grad();
      for (std::size_t k = b; k < end; ++k) {
        const std::size_t i = order[k];
        std::mt19937_64 rng(derive_seed(seed, kTagAlmAugment, static_cast<std::uint64_t>(epoch) * order.size() + i));
        AlmLossValues l;
        if (tc.augment_prob > 0.0 && unit(rng) < tc.augment_prob) {
          const SceneInstance aug = augment_scene(*split.train[i], rng());
          l = model.accumulate(aug, build_targets(aug.answer_tokens, aug.tokens));
        } else {
          l = model.accumulate(*split.train[i], targets[i]);
        }
        const double total_loss = l.total;
        if (!std::isfinite(total_loss)) {
          restore(model.params(), last_good);
          std::string where;
          if (out_dir) {
            save_alm(*out_dir / "alm.ckpt", model);
            append_jsonl(log_path, {{"event", "diverged"}, {"epoch", epoch}, {"steps", step}});
            where = "; last good checkpoint saved to " + (*out_dir / "alm.ckpt").string();
          }
          throw TrainingDiverged("locator loss became non-finite at step " + std::to_string(step) + where);
        }
        rec.loss += total_loss;
        rec.loss_bbox += l.bbox;
        rec.loss_s += l.selection;
        ++seen;
      }
      scale_grads(model.params(), 1.0 / static_cast<double>(end - b));
      rec.lr = scheduled_lr(tc.optimizer, step, total);
      opt.step(model.params(), rec.lr);
      ++step;
      if (!model.params().all_finite()) {
        restore(model.params(), last_good);
        if (out_dir) save_alm(*out_dir / "alm.ckpt", model);
        throw TrainingDiverged("locator parameters became non-finite at step " + std::to_string(step));
      }
    }
    rec.steps = step;
    if (seen) {
      rec.loss /= static_cast<double>(seen);
      rec.loss_bbox /= static_cast<double>(seen);
      rec.loss_s /= static_cast<double>(seen);
    }
    const LocatorScore score = score_locator(model, val);
    rec.val_selection_f1 = score.selection_f1;
    rec.val_mean_iou = score.mean_iou;
    result.log.push_back(rec);
    if (out_dir) append_jsonl(log_path, to_json(rec));
    if (val.empty() || score.selection_f1 > best_score.selection_f1 ||
        (score.selection_f1 == best_score.selection_f1 && score.mean_iou > best_score.mean_iou)) {
      best_score = score;
      best = snapshot(model.params());
      result.best_epoch = epoch;
    }
  }
  restore(model.params(), best);
  if (out_dir) {
    save_alm(*out_dir / "alm.ckpt", model);
    append_jsonl(log_path, {{"event", "done"}, {"best_epoch", result.best_epoch}});
  }
  return result;
}

namespace {

struct AgmSample {
  const SceneInstance* clean = nullptr;
  std::vector<int> gold;       // matched token indices
  std::vector<int> rank;       // reading-order rank per token
  std::vector<int> pred_clean; // locator selection on the clean scene
  std::vector<int> pred_corrupted;
};

std::vector<int> selection_indices(const Selection& sel) {
  std::vector<int> out;
  for (const auto& [i, w] : sel) out.push_back(i);
  return out;
}

std::vector<int> perturbed_gold(const AgmSample& s, std::size_t n_tokens, const AgmTrainConfig& tc,
                                std::mt19937_64& rng) {
  std::vector<int> keep;
  for (int i : s.gold)
    if (unit(rng) >= tc.gold_drop_rate) keep.push_back(i);
  if (unit(rng) < tc.distractor_rate) {
    std::vector<int> others;
    for (int i = 0; i < static_cast<int>(n_tokens); ++i)
      if (std::find(keep.begin(), keep.end(), i) == keep.end()) others.push_back(i);
    if (!others.empty()) keep.push_back(others[below(rng, others.size())]);
  }
  std::sort(keep.begin(), keep.end(), [&](int a, int b) {
    return s.rank[static_cast<std::size_t>(a)] < s.rank[static_cast<std::size_t>(b)];
  });
  return keep;
}

double exact_match_rate(const std::vector<PredictionRecord>& preds, const std::vector<SceneInstance>& scenes,
                        bool copy_only) {
  double hits = 0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    if (copy_only && !requires_copy(parse_template(scenes[i].template_name))) continue;
    hits += exact_match(preds[i].predicted_answer, scenes[i]) ? 1.0 : 0.0;
    ++n;
  }
  return n ? hits / static_cast<double>(n) : 0.0;
}

}  // namespace

AgmTrainResult train_agm(const std::vector<SceneInstance>& train, AlmModel* alm,
                         const PipelineConfig& cfg, std::uint64_t seed,
                         const std::optional<fs::path>& out_dir) {
  const AgmTrainConfig& tc = cfg.agm_train;
  const bool uses_selection = tc.selection != SelectionSource::None;
  if (uses_selection && alm == nullptr)
    throw std::invalid_argument("train_agm: a locator is required for selection '" +
                                std::string(to_string(tc.selection)) + "'");
  const Split split = split_tail(train, tc.val_fraction);
  if (split.train.empty()) throw std::invalid_argument("train_agm: no training instances");
  const std::vector<SceneInstance> val = copy_scenes(split.val);

  const int gold_epochs = uses_selection ? static_cast<int>(std::lround(tc.gold_fraction * tc.epochs)) : tc.epochs;
  const bool needs_predictions = uses_selection && gold_epochs < tc.epochs;
  CorruptionSpec aug;
  aug.char_sub_rate = tc.augment_char_sub_rate;
  aug.scope = CorruptionScope::AnswerTokens;
  aug.seed = derive_seed(seed, kTagAugment, 0);

  std::vector<AgmSample> samples(split.train.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    AgmSample& s = samples[i];
    s.clean = split.train[i];
    const AlmTargets t = build_targets(s.clean->answer_tokens, s.clean->tokens);
    s.gold.assign(t.matched.begin(), t.matched.end());
    const auto order = reading_order(s.clean->tokens);
    s.rank.resize(order.size());
    for (std::size_t r = 0; r < order.size(); ++r) s.rank[static_cast<std::size_t>(order[r])] = static_cast<int>(r);
    if (needs_predictions) {
      const double th = alm->loss_config().select_threshold;
      s.pred_clean = selection_indices(select_by(alm->predict(*s.clean), s.clean->tokens, tc.selection, th));
      if (tc.augment_fraction > 0.0) {
        const SceneInstance c = corrupt_ocr(*s.clean, aug);
        s.pred_corrupted = selection_indices(select_by(alm->predict(c), c.tokens, tc.selection, th));
      }
    }
  }

  std::unique_ptr<DirLock> lock;
  fs::path log_path;
  if (out_dir) {
    lock = std::make_unique<DirLock>(*out_dir);
    log_path = *out_dir / "agm_log.jsonl";
    fs::remove(log_path);
  }

  AgmTrainResult result;
  result.model = std::make_unique<AgmModel>(cfg.agm, derive_seed(seed, kTagAgmInit, static_cast<std::uint64_t>(tc.selection)));
  AgmModel& model = *result.model;
  Optimizer opt(tc.optimizer, model.params());
  const long total = total_steps(samples.size(), tc.batch_size, tc.epochs, tc.max_steps);
  long step = 0;
  std::vector<nn::Mat> best = snapshot(model.params());
  double best_em = -1.0;

  for (int epoch = 1; epoch <= tc.epochs && step < total; ++epoch) {
    const std::vector<nn::Mat> last_good = snapshot(model.params());
    const bool gold_phase = epoch <= gold_epochs;
    const auto order = permutation(samples.size(), derive_seed(seed, kTagAgmShuffle, static_cast<std::uint64_t>(epoch)));
    AgmEpochRecord rec;
    rec.epoch = epoch;
    rec.gold_selection = gold_phase;
    std::size_t seen = 0;
    for (std::size_t b = 0; b < order.size() && step < total; b += static_cast<std::size_t>(tc.batch_size)) {
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(tc.batch_size));
      model.params().zero_grad();
      for (std::size_t k = b; k < end; ++k) {
        const std::size_t i = order[k];
        const AgmSample& s = samples[i];
        std::mt19937_64 rng(derive_seed(seed, kTagAgmNoise, static_cast<std::uint64_t>(epoch) * samples.size() + i));
        SceneInstance scene = *s.clean;
        if (tc.augment_prob > 0.0 && unit(rng) < tc.augment_prob) scene = augment_scene(scene, rng());
        const bool corrupted = tc.augment_fraction > 0.0 && unit(rng) < tc.augment_fraction;
        if (corrupted) {
          CorruptionSpec spec = aug;
          spec.seed = rng();
          scene = corrupt_ocr(scene, spec);
        }
        std::vector<std::string> sel;
        if (uses_selection) {
          const std::vector<int> idx = gold_phase ? perturbed_gold(s, scene.tokens.size(), tc, rng)
                                                  : (corrupted ? s.pred_corrupted : s.pred_clean);
          for (int k : idx) sel.push_back(scene.tokens[static_cast<std::size_t>(k)].word);
        }
        const GenBatch batch{build_gen_input(scene.question, sel, scene.tokens, cfg.agm.max_input_len),
                             build_gen_target(scene.answer_tokens)};
        const double l = model.accumulate(batch);
        if (!std::isfinite(l)) {
          restore(model.params(), last_good);
          std::string where;
          if (out_dir) {
            save_agm(*out_dir / "agm.ckpt", model, tc.selection);
            append_jsonl(log_path, {{"event", "diverged"}, {"epoch", epoch}, {"steps", step}});
            where = "; last good checkpoint saved to " + (*out_dir / "agm.ckpt").string();
          }
          throw TrainingDiverged("generator loss became non-finite at step " + std::to_string(step) + where);
        }
        rec.loss += l;
        ++seen;
      }
      const int extra = uses_selection ? tc.lexicon_examples : 0;
      if (extra > 0) {
        std::mt19937_64 rng(derive_seed(seed, kTagLexicon, static_cast<std::uint64_t>(step)));
        const auto& words = scene_words();
        for (int e = 0; e < extra; ++e) {
          const std::string& w = words[below(rng, words.size())];
          const GenBatch batch{build_gen_input({}, std::vector<std::string>{corrupt_word(w, tc.augment_char_sub_rate, rng())}, {},
                                               cfg.agm.max_input_len),
                               build_gen_target({w})};
          model.accumulate(batch);
        }
      }
      scale_grads(model.params(), 1.0 / static_cast<double>(end - b + static_cast<std::size_t>(extra)));
      rec.lr = scheduled_lr(tc.optimizer, step, total);
      opt.step(model.params(), rec.lr);
      ++step;
      if (!model.params().all_finite()) {
        restore(model.params(), last_good);
        if (out_dir) save_agm(*out_dir / "agm.ckpt", model, tc.selection);
        throw TrainingDiverged("generator parameters became non-finite at step " + std::to_string(step));
      }
    }
    rec.steps = step;
    if (seen) rec.loss /= static_cast<double>(seen);
    if (!val.empty()) {
      const auto preds = predict(val, alm, model, tc.selection, cfg);
      rec.val_exact_match = exact_match_rate(preds, val, false);
    }
    result.log.push_back(rec);
    if (out_dir) append_jsonl(log_path, to_json(rec));
    // Ties go to the later epoch, which has seen the test-time selections.
    if (val.empty() || rec.val_exact_match >= best_em) {
      best_em = rec.val_exact_match;
      best = snapshot(model.params());
      result.best_epoch = epoch;
    }
  }
  restore(model.params(), best);
  if (out_dir) {
    save_agm(*out_dir / "agm.ckpt", model, tc.selection);
    append_jsonl(log_path, {{"event", "done"}, {"best_epoch", result.best_epoch}});
  }
  return result;
}

// ---------------------------------------------------------------------------
// Prediction

namespace {

PredictionRecord locator_record(const SceneInstance& scene, const AlmOutput* out) {
  PredictionRecord r;
  r.instance_id = scene.id;
  if (out) {
    r.p_w = out->p_w;
    r.b_p = out->b_p;
    r.p_s = out->p_s;
  }
  return r;
}

std::vector<AlmOutput> run_locator(AlmModel& alm, const std::vector<SceneInstance>& scenes) {
  std::vector<AlmOutput> outs;
  outs.reserve(scenes.size());
  for (const auto& s : scenes) outs.push_back(alm.predict(s));
  return outs;
}

std::vector<PredictionRecord> generate_all(const std::vector<SceneInstance>& scenes,
                                           const std::vector<AlmOutput>* outs, AgmModel& agm,
                                           SelectionSource source, const PipelineConfig& cfg) {
  std::vector<PredictionRecord> recs;
  recs.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const SceneInstance& scene = scenes[i];
    const AlmOutput* out = outs ? &(*outs)[i] : nullptr;
    PredictionRecord r = locator_record(scene, out);
    if (out && source != SelectionSource::None)
      r.selected = select_by(*out, scene.tokens, source, cfg.alm_loss.select_threshold);
    const GenInput in = build_gen_input(scene.question, selection_words(r.selected), scene.tokens,
                                        agm.config().max_input_len);
    r.predicted_answer = join_words(agm.generate(in, cfg.decode));
    recs.push_back(std::move(r));
  }
  return recs;
}

std::vector<PredictionRecord> copy_all(const std::vector<SceneInstance>& scenes,
                                       const std::vector<AlmOutput>& outs, SelectionSource source,
                                       const PipelineConfig& cfg) {
  std::vector<PredictionRecord> recs;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    PredictionRecord r = locator_record(scenes[i], &outs[i]);
    r.selected = select_by(outs[i], scenes[i].tokens, source, cfg.alm_loss.select_threshold);
    r.predicted_answer = join_words(selection_words(r.selected));
    recs.push_back(std::move(r));
  }
  return recs;
}

}  // namespace

std::vector<PredictionRecord> predict(const std::vector<SceneInstance>& scenes, AlmModel* alm,
                                      AgmModel& agm, SelectionSource source,
                                      const PipelineConfig& cfg) {
  if (source == SelectionSource::None) return generate_all(scenes, nullptr, agm, source, cfg);
  if (!alm) throw std::invalid_argument("predict: a locator is required for selection '" +
                                        std::string(to_string(source)) + "'");
  const auto outs = run_locator(*alm, scenes);
  return generate_all(scenes, &outs, agm, source, cfg);
}

std::vector<PredictionRecord> predict_copy(const std::vector<SceneInstance>& scenes, AlmModel& alm,
                                           SelectionSource source, const PipelineConfig& cfg) {
  return copy_all(scenes, run_locator(alm, scenes), source, cfg);
}

std::vector<SceneInstance> corrupt_answer_tokens(const std::vector<SceneInstance>& scenes,
                                                 double char_sub_rate, std::uint64_t seed) {
  CorruptionSpec spec;
  spec.char_sub_rate = char_sub_rate;
  spec.scope = CorruptionScope::AnswerTokens;
  spec.seed = seed;
  std::vector<SceneInstance> out;
  out.reserve(scenes.size());
  for (const auto& s : scenes) out.push_back(corrupt_ocr(s, spec));
  return out;
}

// ---------------------------------------------------------------------------
// Ablation

std::string variant_label(SelectionSource s) {
  switch (s) {
    case SelectionSource::None: return "None";
    case SelectionSource::Visual: return "V";
    case SelectionSource::Linguistic: return "L";
    case SelectionSource::Mixed: return "V+L";
  }
  return "V+L";
}

MeanSd mean_sd(const std::vector<double>& xs) {
  MeanSd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0;
    for (double x : xs) ss += (x - r.mean) * (x - r.mean);
    r.sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return r;
}

AblationResult run_ablation(const Dataset& data, const PipelineConfig& cfg, const AblationOptions& opts) {
  if (opts.seeds.size() < 3) throw std::invalid_argument("run_ablation: at least 3 seeds are required");
  AblationResult result;
  std::vector<SceneInstance> corrupted_test;
  if (opts.denoise_char_sub_rate > 0.0)
    corrupted_test = corrupt_answer_tokens(data.test, opts.denoise_char_sub_rate,
                                           derive_seed(data.seed, kTagDenoiseSplit, 0));
  std::optional<fs::path> root;
  if (opts.out_dir) root = resolve_output(*opts.out_dir);

  for (std::uint64_t seed : opts.seeds) {
    std::optional<fs::path> dir;
    if (root) dir = *root / ("seed-" + std::to_string(seed));
    auto log = [&](const std::string& msg) {
      if (opts.verbose) std::cerr << "[seed " << seed << "] " << msg << std::endl;
    };
    log("training locator");
    AlmTrainResult alm = train_alm(data.train, cfg, seed, dir);
    log("training generator (exposure schedule)");
    PipelineConfig mixed_cfg = cfg;
    mixed_cfg.agm_train.selection = SelectionSource::Mixed;
    AgmTrainResult agm = train_agm(data.train, alm.model.get(), mixed_cfg, seed, dir);
    log("training generator (no selection)");
    PipelineConfig none_cfg = cfg;
    none_cfg.agm_train.selection = SelectionSource::None;
    std::optional<fs::path> none_dir;
    if (dir) none_dir = *dir / "none";
    AgmTrainResult agm_none = train_agm(data.train, nullptr, none_cfg, seed, none_dir);

    log("evaluating");
    AblationSeedRecord rec;
    rec.seed = seed;
    const auto outs = run_locator(*alm.model, data.test);
    for (SelectionSource v : kAblationVariants) {
      const auto preds = v == SelectionSource::None
                             ? generate_all(data.test, nullptr, *agm_none.model, v, cfg)
                             : generate_all(data.test, &outs, *agm.model, v, cfg);
      rec.reports[variant_label(v)] = evaluate_run(preds, data.test, cfg.anls_threshold);
      if (dir) save_predictions(*dir / ("predictions_" + std::string(to_string(v)) + ".jsonl"), preds);
    }
    if (!corrupted_test.empty()) {
      const auto c_outs = run_locator(*alm.model, corrupted_test);
      const auto gen = generate_all(corrupted_test, &c_outs, *agm.model, SelectionSource::Mixed, cfg);
      const auto copy = copy_all(corrupted_test, c_outs, SelectionSource::Mixed, cfg);
      rec.denoise_generator_em = exact_match_rate(gen, corrupted_test, true);
      rec.denoise_copy_em = exact_match_rate(copy, corrupted_test, true);
    }
    if (dir) {
      std::vector<double> alm_loss, agm_loss;
      for (const auto& r : alm.log) alm_loss.push_back(r.loss);
      for (const auto& r : agm.log) agm_loss.push_back(r.loss);
      write_line_plot(*dir / "alm_loss.ppm", {alm_loss});
      write_line_plot(*dir / "agm_loss.ppm", {agm_loss});
    }
    for (const auto& [k, r] : rec.reports)
      log(k + " accuracy " + std::to_string(r.overall.accuracy));
    result.per_seed.push_back(std::move(rec));
  }

  for (SelectionSource v : kAblationVariants) {
    std::vector<double> xs;
    for (const auto& r : result.per_seed) xs.push_back(r.reports.at(variant_label(v)).overall.accuracy);
    result.accuracy[variant_label(v)] = mean_sd(xs);
  }
  if (!corrupted_test.empty()) {
    std::vector<double> g, c;
    for (const auto& r : result.per_seed) {
      g.push_back(r.denoise_generator_em);
      c.push_back(r.denoise_copy_em);
    }
    result.denoise_generator_em = mean_sd(g);
    result.denoise_copy_em = mean_sd(c);
  }
  if (root) {
    fs::create_directories(*root);
    std::ofstream(*root / "ablation.json") << to_json(result).dump(2) << '\n';
    std::ofstream(*root / "ablation.txt") << format_ablation_table(result);
    std::vector<double> means, sds;
    for (SelectionSource v : kAblationVariants) {
      means.push_back(result.accuracy.at(variant_label(v)).mean);
      sds.push_back(result.accuracy.at(variant_label(v)).sd);
    }
    write_bar_chart(*root / "ablation.ppm", means, sds);
  }
  return result;
}

json to_json(const AblationResult& r) {
  json seeds = json::array();
  for (const auto& s : r.per_seed) {
    json reports = json::object();
    for (const auto& [k, v] : s.reports) reports[k] = to_json(v);
    seeds.push_back({{"seed", s.seed},
                     {"reports", reports},
                     {"denoise_generator_em", s.denoise_generator_em},
                     {"denoise_copy_em", s.denoise_copy_em}});
  }
  json acc = json::object();
  for (const auto& [k, v] : r.accuracy) acc[k] = {{"mean", v.mean}, {"sd", v.sd}};
  return {{"schema_version", kReportSchemaVersion},
          {"kind", "ltg-ablation"},
          {"accuracy", acc},
          {"denoise_generator_em", {{"mean", r.denoise_generator_em.mean}, {"sd", r.denoise_generator_em.sd}}},
          {"denoise_copy_em", {{"mean", r.denoise_copy_em.mean}, {"sd", r.denoise_copy_em.sd}}},
          {"per_seed", seeds}};
}

std::string format_ablation_table(const AblationResult& r) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "variant" << std::right << std::setw(12) << "accuracy"
     << std::setw(10) << "sd";
  for (const auto& s : r.per_seed) os << std::setw(10) << ("seed " + std::to_string(s.seed));
  os << '\n';
  for (SelectionSource v : kAblationVariants) {
    const std::string k = variant_label(v);
    const auto it = r.accuracy.find(k);
    if (it == r.accuracy.end()) continue;
    os << std::left << std::setw(8) << k << std::right << std::fixed << std::setprecision(2)
       << std::setw(12) << 100.0 * it->second.mean << std::setw(10) << 100.0 * it->second.sd;
    for (const auto& s : r.per_seed) os << std::setw(10) << 100.0 * s.reports.at(k).overall.accuracy;
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Gradient checks

namespace {

template <typename LossFn>
GradCheckResult finite_difference(nn::ParamStore& ps, LossFn loss, std::uint64_t seed,
                                  std::size_t coordinates, double eps) {
  std::mt19937_64 rng(seed);
  // Half the coordinates come from entries with a nonzero analytic gradient,
  // half uniformly over all entries.
  std::vector<std::pair<std::size_t, Eigen::Index>> live;
  auto& es = ps.entries();
  for (std::size_t e = 0; e < es.size(); ++e)
    for (Eigen::Index k = 0; k < es[e].grad.size(); ++k)
      if (es[e].grad.data()[k] != 0.0) live.emplace_back(e, k);
  GradCheckResult r;
  for (std::size_t c = 0; c < coordinates; ++c) {
    std::size_t e;
    Eigen::Index k;
    if (c % 2 == 0 && !live.empty()) {
      std::tie(e, k) = live[below(rng, live.size())];
    } else {
      e = below(rng, es.size());
      k = static_cast<Eigen::Index>(below(rng, static_cast<std::size_t>(es[e].value.size())));
    }
    double& x = es[e].value.data()[k];
    const double x0 = x;
    x = x0 + eps;
    const double up = loss();
    x = x0 - eps;
    const double down = loss();
    x = x0;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = es[e].grad.data()[k];
    const double rel = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), kGradCheckFloor});
    if (r.worst_param.empty() || rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_param = es[e].name + "[" + std::to_string(k) + "]";
    }
    ++r.coordinates;
  }
  return r;
}

SceneInstance gradcheck_scene(std::uint64_t seed) {
  WorldConfig wc;
  wc.templates = {QuestionTemplate::ColorCategory};
  wc.template_weights = {1.0};
  return generate_instance(wc, derive_seed(seed, kTagGradcheck, 1), "gradcheck");
}

}  // namespace

GradCheckResult gradcheck_alm(std::uint64_t seed, std::size_t coordinates, double eps) {
  const SceneInstance scene = gradcheck_scene(seed);
  const AlmTargets targets = build_targets(scene.answer_tokens, scene.tokens);
  AlmModel model(ModelConfig{}, AlmLossConfig{}, derive_seed(seed, kTagGradcheck, 2));
  model.params().zero_grad();
  model.accumulate(scene, targets);
  return finite_difference(model.params(), [&] { return model.loss_value(scene, targets); },
                           derive_seed(seed, kTagGradcheck, 3), coordinates, eps);
}

GradCheckResult gradcheck_agm(std::uint64_t seed, std::size_t coordinates, double eps) {
  const SceneInstance scene = gradcheck_scene(seed);
  AgmModel model(AgmConfig{}, derive_seed(seed, kTagGradcheck, 4));
  const GenBatch batch{build_gen_input(scene.question, scene.answer_tokens, scene.tokens,
                                       model.config().max_input_len),
                       build_gen_target(scene.answer_tokens)};
  model.params().zero_grad();
  model.accumulate(batch);
  return finite_difference(model.params(), [&] { return model.loss_value(batch); },
                           derive_seed(seed, kTagGradcheck, 5), coordinates, eps);
}

// ---------------------------------------------------------------------------
// Plots

namespace {

struct Canvas {
  int w, h;
  std::vector<std::array<unsigned char, 3>> px;
  Canvas(int w_, int h_) : w(w_), h(h_), px(static_cast<std::size_t>(w_ * h_), {255, 255, 255}) {}
  void set(int x, int y, std::array<unsigned char, 3> c) {
    if (x >= 0 && y >= 0 && x < w && y < h) px[static_cast<std::size_t>(y * w + x)] = c;
  }
  void line(int x0, int y0, int x1, int y1, std::array<unsigned char, 3> c) {
    const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      set(x0, y0, c);
      if (x0 == x1 && y0 == y1) break;
      const int e2 = 2 * err;
      if (e2 >= dy) { err += dy; x0 += sx; }
      if (e2 <= dx) { err += dx; y0 += sy; }
    }
  }
  void rect(int x0, int y0, int x1, int y1, std::array<unsigned char, 3> c) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
      for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
  }
  void save(const fs::path& path) const {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P6\n" << w << ' ' << h << "\n255\n";
    for (const auto& p : px) out.write(reinterpret_cast<const char*>(p.data()), 3);
  }
};

constexpr std::array<std::array<unsigned char, 3>, 4> kPalette = {{
    {31, 119, 180}, {255, 127, 14}, {44, 160, 44}, {214, 39, 40}}};
constexpr int kMargin = 24;

void axes(Canvas& c) {
  const std::array<unsigned char, 3> black{0, 0, 0};
  c.line(kMargin, c.h - kMargin, c.w - kMargin, c.h - kMargin, black);
  c.line(kMargin, kMargin, kMargin, c.h - kMargin, black);
}

}  // namespace

void write_line_plot(const fs::path& path, const std::vector<std::vector<double>>& series,
                     int width, int height) {
  Canvas c(width, height);
  axes(c);
  double lo = INFINITY, hi = -INFINITY;
  std::size_t n = 0;
  for (const auto& s : series) {
    for (double v : s)
      if (std::isfinite(v)) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
      }
    n = std::max(n, s.size());
  }
  if (n >= 1 && std::isfinite(lo)) {
    if (hi == lo) hi = lo + 1.0;
    const double pw = width - 2 * kMargin, ph = height - 2 * kMargin;
    auto px = [&](std::size_t i) { return kMargin + static_cast<int>(n > 1 ? pw * static_cast<double>(i) / static_cast<double>(n - 1) : 0.0); };
    auto py = [&](double v) { return height - kMargin - static_cast<int>(ph * (v - lo) / (hi - lo)); };
    for (std::size_t k = 0; k < series.size(); ++k) {
      const auto& s = series[k];
      const auto col = kPalette[k % kPalette.size()];
      for (std::size_t i = 0; i < s.size(); ++i) {
        c.rect(px(i) - 1, py(s[i]) - 1, px(i) + 1, py(s[i]) + 1, col);
        if (i > 0) c.line(px(i - 1), py(s[i - 1]), px(i), py(s[i]), col);
      }
    }
  }
  c.save(path);
}

void write_bar_chart(const fs::path& path, const std::vector<double>& values,
                     const std::vector<double>& errors, int width, int height) {
  Canvas c(width, height);
  axes(c);
  const double pw = width - 2 * kMargin, ph = height - 2 * kMargin;
  const std::size_t n = values.size();
  auto py = [&](double v) { return height - kMargin - static_cast<int>(ph * std::clamp(v, 0.0, 1.0)); };
  for (std::size_t i = 0; i < n; ++i) {
    const double slot = pw / static_cast<double>(n);
    const int x0 = kMargin + static_cast<int>(slot * (static_cast<double>(i) + 0.2));
    const int x1 = kMargin + static_cast<int>(slot * (static_cast<double>(i) + 0.8));
    c.rect(x0, py(values[i]), x1, height - kMargin - 1, kPalette[i % kPalette.size()]);
    if (i < errors.size() && errors[i] > 0) {
      const int xm = (x0 + x1) / 2;
      const std::array<unsigned char, 3> black{0, 0, 0};
      c.line(xm, py(values[i] - errors[i]), xm, py(values[i] + errors[i]), black);
      c.line(xm - 4, py(values[i] + errors[i]), xm + 4, py(values[i] + errors[i]), black);
      c.line(xm - 4, py(values[i] - errors[i]), xm + 4, py(values[i] - errors[i]), black);
    }
  }
  c.save(path);
}

}  // namespace ltg
