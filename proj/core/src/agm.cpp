#include "ltg/agm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace ltg {

using nn::Graph;
using nn::Mat;
using nn::Var;

nlohmann::json to_json(const AgmConfig& c) {
  return {{"dim", c.dim},
          {"heads", c.heads},
          {"encoder_layers", c.encoder_layers},
          {"decoder_layers", c.decoder_layers},
          {"ffn_hidden", c.ffn_hidden},
          {"max_input_len", c.max_input_len},
          {"max_decode_len", c.max_decode_len}};
}

AgmConfig agm_config_from_json(const nlohmann::json& j) {
  AgmConfig c;
  c.dim = j.value("dim", c.dim);
  c.heads = j.value("heads", c.heads);
  c.encoder_layers = j.value("encoder_layers", c.encoder_layers);
  c.decoder_layers = j.value("decoder_layers", c.decoder_layers);
  c.ffn_hidden = j.value("ffn_hidden", c.ffn_hidden);
  c.max_input_len = j.value("max_input_len", c.max_input_len);
  c.max_decode_len = j.value("max_decode_len", c.max_decode_len);
  validate(c);
  return c;
}

void validate(const AgmConfig& c) {
  if (c.dim <= 0 || c.heads <= 0 || c.dim % c.heads != 0)
    throw std::invalid_argument("generator config: dim must be a positive multiple of heads");
  if (c.encoder_layers < 1 || c.decoder_layers < 1 || c.ffn_hidden < 1)
    throw std::invalid_argument("generator config: layer counts must be >= 1");
  if (c.max_input_len < 4 || c.max_decode_len < 1)
    throw std::invalid_argument("generator config: length limits too small");
}

GenInput build_gen_input(const std::vector<std::string>& question,
                         const std::vector<std::string>& selected,
                         const std::vector<SceneTextToken>& tokens, int max_len) {
  const auto& vocab = Vocabulary::world();
  GenInput in;
  auto push = [&](const std::vector<int>& ids, Segment seg) {
    for (int id : ids) {
      in.ids.push_back(id);
      in.segments.push_back(static_cast<int>(seg));
    }
  };
  for (const auto& w : question) push(vocab.encode_word(w), Segment::Question);
  push({Vocabulary::kSep}, Segment::Question);
  for (const auto& w : selected) push(vocab.encode_word(w), Segment::Selected);
  push({Vocabulary::kSep}, Segment::Selected);
  if (static_cast<int>(in.ids.size()) > max_len)
    throw std::invalid_argument("question and selection alone exceed the generator input limit (" +
                                std::to_string(max_len) + " pieces)");
  const auto order = reading_order(tokens);
  for (std::size_t k = 0; k < order.size(); ++k) {
    auto ids = vocab.encode_word(tokens[static_cast<std::size_t>(order[k])].word);
    if (static_cast<int>(in.ids.size() + ids.size()) > max_len) {
      in.truncated_words = static_cast<int>(order.size() - k);
      break;
    }
    push(ids, Segment::Scene);
  }
  return in;
}

std::vector<int> build_gen_target(const std::vector<std::string>& answer) {
  auto ids = Vocabulary::world().encode_words(answer);
  ids.push_back(Vocabulary::kEos);
  return ids;
}

AgmModel::AgmModel(const AgmConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  validate(cfg);
  std::mt19937_64 rng(seed);
  const int d = cfg.dim;
  const int v = Vocabulary::world().size();
  params_.add_normal("gen.piece_emb", v, d, 0.1, rng);
  params_.add_normal("gen.pos_emb", cfg.max_input_len, d, 0.1, rng);
  params_.add_normal("gen.segment_emb", 3, d, 0.1, rng);
  params_.add_normal("gen.dec_pos_emb", cfg.max_decode_len + 1, d, 0.1, rng);
  for (int l = 0; l < cfg.encoder_layers; ++l)
    enc_.push_back(nn::make_encoder_layer(params_, "gen.enc" + std::to_string(l), d, cfg.heads,
                                          cfg.ffn_hidden, rng));
  for (int l = 0; l < cfg.decoder_layers; ++l)
    dec_.push_back(nn::make_decoder_layer(params_, "gen.dec" + std::to_string(l), d, cfg.heads,
                                          cfg.ffn_hidden, rng));
  out_ = nn::make_linear(params_, "gen.out", d, v, rng);
}

Var AgmModel::encode(Graph& g, const GenInput& input) {
  const int n = static_cast<int>(input.ids.size());
  if (n == 0) throw std::invalid_argument("empty generator input");
  if (n > cfg_.max_input_len)
    throw std::invalid_argument("generator input longer than max_input_len");
  std::vector<int> pos(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pos[static_cast<std::size_t>(i)] = i;
  Var x = nn::gather_rows(g.param(params_.at("gen.piece_emb")), input.ids) +
          nn::gather_rows(g.param(params_.at("gen.pos_emb")), pos) +
          nn::gather_rows(g.param(params_.at("gen.segment_emb")), input.segments);
  for (const auto& layer : enc_) x = nn::apply(g, params_, layer, x);
  return x;
}

Var AgmModel::decode_logits(Graph& g, Var memory, const std::vector<int>& prefix) {
  const int n = static_cast<int>(prefix.size());
  if (n > cfg_.max_decode_len + 1) throw std::invalid_argument("decoder prefix too long");
  std::vector<int> pos(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pos[static_cast<std::size_t>(i)] = i;
  Var y = nn::gather_rows(g.param(params_.at("gen.piece_emb")), prefix) +
          nn::gather_rows(g.param(params_.at("gen.dec_pos_emb")), pos);
  const Mat mask = nn::causal_mask(n);
  for (const auto& layer : dec_) y = nn::apply(g, params_, layer, y, memory, mask);
  return nn::apply(g, params_, out_, y);
}

Var AgmModel::loss(Graph& g, const GenBatch& batch) {
  if (batch.target.empty()) throw std::invalid_argument("empty generator target");
  const int limit = cfg_.max_decode_len + 1;
  std::vector<int> target = batch.target;
  if (static_cast<int>(target.size()) > limit) target.resize(static_cast<std::size_t>(limit));
  Var memory = encode(g, batch.input);
  std::vector<int> prefix{Vocabulary::kBos};
  prefix.insert(prefix.end(), target.begin(), target.end() - 1);
  Var logits = decode_logits(g, memory, prefix);
  return nn::cross_entropy_rows(logits, target);
}

double AgmModel::accumulate(const GenBatch& batch) {
  Graph g;
  Var l = loss(g, batch);
  g.backward(l);
  return l.scalar();
}

double AgmModel::loss_value(const GenBatch& batch) {
  Graph g;
  return loss(g, batch).scalar();
}

std::vector<int> AgmModel::decode(const GenInput& input, const DecodeConfig& dc) {
  const int max_len = std::min(dc.max_len, cfg_.max_decode_len);
  const int beam = std::max(1, dc.beam_size);
  Graph enc_graph;
  Var memory = encode(enc_graph, input);
  const Mat memory_value = memory.value();

  struct Hyp {
    std::vector<int> ids;  // without BOS
    double score = 0.0;
    bool done = false;
  };
  std::vector<Hyp> beams{Hyp{}};
  for (int step = 0; step < max_len; ++step) {
    std::vector<Hyp> next;
    bool any_open = false;
    for (const Hyp& h : beams) {
      if (h.done) {
        next.push_back(h);
        continue;
      }
      any_open = true;
      Graph g;
      Var mem = g.constant(memory_value);
      std::vector<int> prefix{Vocabulary::kBos};
      prefix.insert(prefix.end(), h.ids.begin(), h.ids.end());
      Var logits = decode_logits(g, mem, prefix);
      Eigen::RowVectorXd last = logits.value().row(logits.rows() - 1);
      const double m = last.maxCoeff();
      const double lse = m + std::log((last.array() - m).exp().sum());
      // Top-`beam` continuations, ties broken by smaller id.
      std::vector<int> idx(static_cast<std::size_t>(last.size()));
      for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
      std::partial_sort(idx.begin(), idx.begin() + beam, idx.end(), [&](int a, int b) {
        if (last(a) != last(b)) return last(a) > last(b);
        return a < b;
      });
      for (int k = 0; k < beam; ++k) {
        const int id = idx[static_cast<std::size_t>(k)];
        Hyp c = h;
        c.score += last(id) - lse;
        if (id == Vocabulary::kEos) {
          c.done = true;
        } else {
          c.ids.push_back(id);
        }
        next.push_back(std::move(c));
      }
    }
    if (!any_open) break;
    std::stable_sort(next.begin(), next.end(),
                     [](const Hyp& a, const Hyp& b) { return a.score > b.score; });
    if (static_cast<int>(next.size()) > beam) next.resize(static_cast<std::size_t>(beam));
    beams = std::move(next);
    if (std::all_of(beams.begin(), beams.end(), [](const Hyp& h) { return h.done; })) break;
  }
  return beams.front().ids;
}

std::vector<std::string> AgmModel::generate(const GenInput& input, const DecodeConfig& cfg) {
  return Vocabulary::world().decode(decode(input, cfg));
}

}  // namespace ltg
