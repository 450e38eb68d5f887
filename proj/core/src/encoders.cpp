#include "ltg/encoders.hpp"

#include <cmath>

namespace ltg {

using nn::Graph;
using nn::Mat;
using nn::ParamStore;
using nn::Var;

nlohmann::json to_json(const ModelConfig& c) {
  return {{"dim", c.dim},
          {"heads", c.heads},
          {"layers", c.layers},
          {"ffn_hidden", c.ffn_hidden},
          {"queries", c.queries},
          {"grid_size", c.grid_size},
          {"cell_features", c.cell_features},
          {"patch", c.patch},
          {"max_question_len", c.max_question_len},
          {"max_scene_tokens", c.max_scene_tokens}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.dim = j.value("dim", c.dim);
  c.heads = j.value("heads", c.heads);
  c.layers = j.value("layers", c.layers);
  c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
  c.queries = j.value("queries", c.queries);
  c.grid_size = j.value("grid_size", c.grid_size);
  c.cell_features = j.value("cell_features", c.cell_features);
  c.patch = j.value("patch", c.patch);
  c.max_question_len = j.value("max_question_len", c.max_question_len);
  c.max_scene_tokens = j.value("max_scene_tokens", c.max_scene_tokens);
  validate(c);
  return c;
}

void validate(const ModelConfig& c) {
  if (c.dim <= 0 || c.heads <= 0 || c.dim % c.heads != 0)
    throw std::invalid_argument("model config: dim must be a positive multiple of heads");
  if (c.dim % 4 != 0) throw std::invalid_argument("model config: dim must be divisible by 4");
  if (c.layers < 1 || c.ffn_hidden < 1 || c.queries < 1)
    throw std::invalid_argument("model config: layers, ffn_hidden, queries must be >= 1");
  if (c.patch < 1 || c.grid_size % c.patch != 0)
    throw std::invalid_argument("model config: grid_size must be divisible by patch");
  if (c.max_question_len < 1 || c.max_scene_tokens < 1)
    throw std::invalid_argument("model config: length limits must be >= 1");
}

std::vector<std::vector<int>> piece_groups(const Vocabulary& vocab,
                                           const std::vector<std::string>& words) {
  std::vector<std::vector<int>> groups;
  groups.reserve(words.size());
  for (const auto& w : words) groups.push_back(vocab.encode_word(w));
  return groups;
}

namespace {

constexpr int kSlots = 4;
constexpr int kBoxFreqs = 4;
constexpr int kBoxFeatures = 6 * (1 + 2 * kBoxFreqs);

/// Raw (x1, y1, x2, y2, w, h) plus sin/cos at frequencies pi * 2^k.
Eigen::RowVectorXd box_features(const BBox& b) {
  const double raw[6] = {b.x1, b.y1, b.x2, b.y2, b.width(), b.height()};
  Eigen::RowVectorXd f(kBoxFeatures);
  int j = 0;
  for (double v : raw) {
    f(j++) = v;
    for (int k = 0; k < kBoxFreqs; ++k) {
      const double a = M_PI * std::ldexp(1.0, k) * v;
      f(j++) = std::sin(a);
      f(j++) = std::cos(a);
    }
  }
  return f;
}

/// Word rows: mean of piece embeddings plus mean of within-word slot embeddings.
Var embed_words(Graph& g, ParamStore& ps, const std::string& table,
                const std::string& slot_table, const std::vector<std::string>& words) {
  const auto& vocab = Vocabulary::world();
  auto groups = piece_groups(vocab, words);
  std::vector<std::vector<int>> slots(groups.size());
  for (std::size_t i = 0; i < groups.size(); ++i)
    for (std::size_t k = 0; k < groups[i].size(); ++k)
      slots[i].push_back(static_cast<int>(std::min<std::size_t>(k, kSlots - 1)));
  return nn::gather_mean_rows(g.param(ps.at(table)), groups) +
         nn::gather_mean_rows(g.param(ps.at(slot_table)), slots);
}

std::vector<int> iota_ids(int n) {
  std::vector<int> ids(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = i;
  return ids;
}

Var repeat_row(Graph& g, ParamStore& ps, const std::string& name, int row, int n) {
  std::vector<int> ids(static_cast<std::size_t>(n), row);
  return nn::gather_rows(g.param(ps.at(name)), ids);
}

}  // namespace

// ---------------------------------------------------------------------------
// TextLayoutEncoder

TextLayoutEncoder::TextLayoutEncoder(ParamStore& ps, const ModelConfig& cfg,
                                     std::mt19937_64& rng)
    : cfg_(cfg) {
  validate(cfg);
  const int d = cfg.dim;
  const double s = 0.1;
  ps.add_normal("text.piece_emb", Vocabulary::world().size(), d, s, rng);
  ps.add_normal("text.slot_emb", kSlots, d, s, rng);
  ps.add_normal("text.qpos_emb", cfg.max_question_len, d, s, rng);
  ps.add_normal("text.segment_emb", 3, d, s, rng);  // CLS, question, scene
  ps.add_normal("text.lay_special", 2, d, s, rng);  // CLS, question rows
  box_proj_ = nn::make_linear(ps, "text.box_proj", kBoxFeatures, d, rng);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string p = "text.layer" + std::to_string(l);
    Layer layer;
    layer.lang_att = nn::make_attention(ps, p + ".lang_att", d, cfg.heads, rng);
    layer.lay_att = nn::make_attention(ps, p + ".lay_att", d, cfg.heads, rng);
    layer.lang_ln1 = nn::make_layer_norm(ps, p + ".lang_ln1", d);
    layer.lay_ln1 = nn::make_layer_norm(ps, p + ".lay_ln1", d);
    layer.lang_ff = nn::make_feed_forward(ps, p + ".lang_ff", d, cfg.ffn_hidden, rng);
    layer.lay_ff = nn::make_feed_forward(ps, p + ".lay_ff", d, cfg.ffn_hidden, rng);
    layer.lang_ln2 = nn::make_layer_norm(ps, p + ".lang_ln2", d);
    layer.lay_ln2 = nn::make_layer_norm(ps, p + ".lay_ln2", d);
    layers_.push_back(layer);
  }
}

TextLayoutEncoding TextLayoutEncoder::encode(Graph& g, ParamStore& ps,
                                             const std::vector<std::string>& question,
                                             const std::vector<SceneTextToken>& tokens) const {
  const int nq = static_cast<int>(question.size());
  const int m = static_cast<int>(tokens.size());
  if (nq > cfg_.max_question_len)
    throw SequenceTooLong("question has " + std::to_string(nq) + " words, limit " +
                          std::to_string(cfg_.max_question_len));
  if (m > cfg_.max_scene_tokens)
    throw SequenceTooLong("scene has " + std::to_string(m) + " tokens, limit " +
                          std::to_string(cfg_.max_scene_tokens));
  const int d = cfg_.dim;

  // Language stream: [CLS] question scene.
  std::vector<Var> lang_parts;
  std::vector<Var> lay_parts;
  {
    Var cls = nn::gather_rows(g.param(ps.at("text.piece_emb")), std::vector<int>{Vocabulary::kCls});
    lang_parts.push_back(cls + repeat_row(g, ps, "text.segment_emb", 0, 1));
    lay_parts.push_back(repeat_row(g, ps, "text.lay_special", 0, 1));
  }
  if (nq > 0) {
    Var qpos = nn::gather_rows(g.param(ps.at("text.qpos_emb")), iota_ids(nq));
    Var q = embed_words(g, ps, "text.piece_emb", "text.slot_emb", question) + qpos +
            repeat_row(g, ps, "text.segment_emb", 1, nq);
    lang_parts.push_back(q);
    lay_parts.push_back(repeat_row(g, ps, "text.lay_special", 1, nq) + qpos);
  }
  if (m > 0) {
    std::vector<std::string> words;
    Mat boxes(m, kBoxFeatures);
    for (int i = 0; i < m; ++i) {
      const auto& t = tokens[static_cast<std::size_t>(i)];
      words.push_back(t.word);
      boxes.row(i) = box_features(t.box);
    }
    lang_parts.push_back(embed_words(g, ps, "text.piece_emb", "text.slot_emb", words) +
                         repeat_row(g, ps, "text.segment_emb", 2, m));
    lay_parts.push_back(nn::apply(g, ps, box_proj_, g.constant(boxes)));
  }
  Var lang = nn::concat_rows(lang_parts);
  Var lay = nn::concat_rows(lay_parts);

  const int dh = d / cfg_.heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const Layer& layer : layers_) {
    Var ql = nn::apply(g, ps, layer.lang_att.q, lang);
    Var kl = nn::apply(g, ps, layer.lang_att.k, lang);
    Var vl = nn::apply(g, ps, layer.lang_att.v, lang);
    Var qy = nn::apply(g, ps, layer.lay_att.q, lay);
    Var ky = nn::apply(g, ps, layer.lay_att.k, lay);
    Var vy = nn::apply(g, ps, layer.lay_att.v, lay);
    Var lang_heads, lay_heads;
    for (int h = 0; h < cfg_.heads; ++h) {
      // Both streams attend with the summed language + layout scores.
      Var scores = nn::matmul_nt(nn::slice_cols(ql, h * dh, dh), nn::slice_cols(kl, h * dh, dh)) +
                   nn::matmul_nt(nn::slice_cols(qy, h * dh, dh), nn::slice_cols(ky, h * dh, dh));
      Var w = nn::softmax_rows(nn::scale(scores, inv_sqrt));
      Var ol = nn::matmul(w, nn::slice_cols(vl, h * dh, dh));
      Var oy = nn::matmul(w, nn::slice_cols(vy, h * dh, dh));
      lang_heads = h == 0 ? ol : nn::concat_cols(lang_heads, ol);
      lay_heads = h == 0 ? oy : nn::concat_cols(lay_heads, oy);
    }
    lang = nn::apply(g, ps, layer.lang_ln1, lang + nn::apply(g, ps, layer.lang_att.o, lang_heads));
    lay = nn::apply(g, ps, layer.lay_ln1, lay + nn::apply(g, ps, layer.lay_att.o, lay_heads));
    lang = nn::apply(g, ps, layer.lang_ln2, lang + nn::apply(g, ps, layer.lang_ff, lang));
    lay = nn::apply(g, ps, layer.lay_ln2, lay + nn::apply(g, ps, layer.lay_ff, lay));
  }

  TextLayoutEncoding out;
  out.h_cls = nn::slice_rows(lang, 0, 1);
  out.h_lang = nn::slice_rows(lang, 1 + nq, m);
  out.h_lay = nn::slice_rows(lay, 1 + nq, m);
  return out;
}

// ---------------------------------------------------------------------------
// VisualEncoder

VisualEncoder::VisualEncoder(ParamStore& ps, const ModelConfig& cfg, std::mt19937_64& rng)
    : cfg_(cfg) {
  validate(cfg);
  const int d = cfg.dim;
  const double s = 0.1;
  const int in = cfg.patch * cfg.patch * cfg.cell_features;
  patch_proj_ = nn::make_linear(ps, "vis.patch_proj", in, d, rng);
  ps.add_normal("vis.piece_emb", Vocabulary::world().size(), d, s, rng);
  ps.add_normal("vis.slot_emb", kSlots, d, s, rng);
  ps.add_normal("vis.qpos_emb", cfg.max_question_len, d, s, rng);
  ps.add_normal("vis.segment_emb", 2, d, s, rng);  // image, question
  ps.add_normal("vis.queries", cfg.queries + 1, d, 1.0, rng);  // row 0 is CLS
  for (int l = 0; l < cfg.layers; ++l)
    enc_.push_back(nn::make_encoder_layer(ps, "vis.enc" + std::to_string(l), d, cfg.heads,
                                          cfg.ffn_hidden, rng));
  for (int l = 0; l < cfg.layers; ++l)
    dec_.push_back(nn::make_decoder_layer(ps, "vis.dec" + std::to_string(l), d, cfg.heads,
                                          cfg.ffn_hidden, rng));
  const int side = cfg.grid_size / cfg.patch;
  pos2d_.resize(side * side, d);
  for (int r = 0; r < side; ++r)
    for (int c = 0; c < side; ++c) {
      pos2d_.row(r * side + c) << nn::sinusoid(r, d / 2), nn::sinusoid(c, d / 2);
    }
}

Mat VisualEncoder::patchify(const VisualGrid& grid) const {
  if (grid.size != cfg_.grid_size || grid.features != cfg_.cell_features)
    throw std::invalid_argument("visual grid is " + std::to_string(grid.size) + "x" +
                                std::to_string(grid.size) + "x" + std::to_string(grid.features) +
                                ", model expects " + std::to_string(cfg_.grid_size) + "x" +
                                std::to_string(cfg_.grid_size) + "x" +
                                std::to_string(cfg_.cell_features));
  const int p = cfg_.patch;
  const int side = grid.size / p;
  const int f = grid.features;
  Mat out(side * side, p * p * f);
  for (int pr = 0; pr < side; ++pr)
    for (int pc = 0; pc < side; ++pc)
      for (int dr = 0; dr < p; ++dr)
        for (int dc = 0; dc < p; ++dc)
          for (int k = 0; k < f; ++k)
            out(pr * side + pc, (dr * p + dc) * f + k) = grid.at(pr * p + dr, pc * p + dc, k);
  return out;
}

VisualEncoding VisualEncoder::encode(Graph& g, ParamStore& ps,
                                     const std::vector<std::string>& question,
                                     const VisualGrid& grid) const {
  const int nq = static_cast<int>(question.size());
  if (nq > cfg_.max_question_len)
    throw SequenceTooLong("question has " + std::to_string(nq) + " words, limit " +
                          std::to_string(cfg_.max_question_len));
  Mat patches = patchify(grid);
  const int np = static_cast<int>(patches.rows());
  Var img = nn::apply(g, ps, patch_proj_, g.constant(std::move(patches))) + g.constant(pos2d_) +
            repeat_row(g, ps, "vis.segment_emb", 0, np);
  Var memory = img;
  if (nq > 0) {
    Var q = embed_words(g, ps, "vis.piece_emb", "vis.slot_emb", question) +
            nn::gather_rows(g.param(ps.at("vis.qpos_emb")), iota_ids(nq)) +
            repeat_row(g, ps, "vis.segment_emb", 1, nq);
    std::vector<Var> parts{img, q};
    memory = nn::concat_rows(parts);
  }
  for (const auto& layer : enc_) memory = nn::apply(g, ps, layer, memory);
  Var x = g.param(ps.at("vis.queries"));
  for (const auto& layer : dec_) x = nn::apply(g, ps, layer, x, memory);
  VisualEncoding out;
  out.h_cls = nn::slice_rows(x, 0, 1);
  out.h_v = nn::slice_rows(x, 1, cfg_.queries);
  return out;
}

}  // namespace ltg
