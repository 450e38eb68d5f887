#include "ltg/alm.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "ltg/dual.hpp"

namespace ltg {

using nn::Graph;
using nn::Mat;
using nn::ParamStore;
using nn::Var;

nlohmann::json to_json(const AlmLossConfig& c) {
  return {{"lambda_l1", c.lambda_l1},
          {"lambda_giou", c.lambda_giou},
          {"select_threshold", c.select_threshold},
          {"clamp_eps", c.clamp_eps},
          {"aux_linguistic_loss", c.aux_linguistic_loss}};
}

AlmLossConfig alm_loss_config_from_json(const nlohmann::json& j) {
  AlmLossConfig c;
  c.lambda_l1 = j.value("lambda_l1", c.lambda_l1);
  c.lambda_giou = j.value("lambda_giou", c.lambda_giou);
  c.select_threshold = j.value("select_threshold", c.select_threshold);
  c.clamp_eps = j.value("clamp_eps", c.clamp_eps);
  c.aux_linguistic_loss = j.value("aux_linguistic_loss", c.aux_linguistic_loss);
  validate(c);
  return c;
}

void validate(const AlmLossConfig& c) {
  if (!(c.lambda_l1 >= 0.0) || !(c.lambda_giou >= 0.0))
    throw std::invalid_argument("loss weights must be non-negative");
  if (!(c.select_threshold > 0.0 && c.select_threshold < 1.0))
    throw std::invalid_argument("select_threshold must lie in (0,1)");
  if (!(c.clamp_eps > 0.0 && c.clamp_eps < 0.5))
    throw std::invalid_argument("clamp_eps must lie in (0,0.5)");
}

AlmHeads make_alm_heads(ParamStore& ps, int dim, std::mt19937_64& rng) {
  AlmHeads h;
  ps.add_normal("alm.w_l", 2 * dim, 1, 1.0 / std::sqrt(2.0 * dim), rng);
  ps.add_zeros("alm.b_l", 1, 1);
  ps.add_normal("alm.w_v", dim, 1, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
  ps.add_zeros("alm.b_v", 1, 1);
  h.bbox_in = nn::make_linear(ps, "alm.bbox_in", 2 * dim, dim, rng);
  h.bbox_out = nn::make_linear(ps, "alm.bbox_out", dim, 4, rng);
  ps.at("alm.bbox_out.w").value *= 0.1;
  ps.add_normal("alm.w_cls_text", dim, dim, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
  ps.add_normal("alm.w_cls_vis", dim, dim, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
  h.cls_in = nn::make_linear(ps, "alm.cls_in", dim, dim, rng);
  h.cls_out = nn::make_linear(ps, "alm.cls_out", dim, 1, rng);
  return h;
}

Var linguistic_probs(Graph& g, ParamStore& ps, const TextLayoutEncoding& enc) {
  Var h_l = nn::concat_cols(enc.h_lang, enc.h_lay);
  Var z = nn::matmul(h_l, g.param(ps.at("alm.w_l")));
  const Eigen::Index m = z.rows();
  // Broadcast the 1x1 bias over tokens.
  Var bias = nn::matmul(g.constant(Mat::Ones(m, 1)), g.param(ps.at("alm.b_l")));
  return nn::sigmoid(z + bias);
}

Var center_to_corners(Var raw) {
  Graph& g = *raw.g;
  if (raw.rows() != 1 || raw.cols() != 4)
    throw std::invalid_argument("center_to_corners: need 1x4");
  const auto& r = raw.value();
  Mat out(1, 4);
  // Jacobian d(corner)/d(raw), zeroed on clipped coordinates.
  Mat jac = Mat::Zero(4, 4);
  for (int axis = 0; axis < 2; ++axis) {
    const double c = r(0, axis);
    const double s = r(0, axis + 2);
    const double lo = c - 0.5 * s;
    const double hi = c + 0.5 * s;
    out(0, axis) = std::clamp(lo, 0.0, 1.0);
    out(0, axis + 2) = std::clamp(hi, 0.0, 1.0);
    if (lo > 0.0 && lo < 1.0) {
      jac(axis, axis) = 1.0;
      jac(axis, axis + 2) = -0.5;
    }
    if (hi > 0.0 && hi < 1.0) {
      jac(axis + 2, axis) = 1.0;
      jac(axis + 2, axis + 2) = 0.5;
    }
  }
  return g.record(std::move(out), {raw}, [raw, jac](Graph& g, int self) {
    g.grad(raw.id) += g.grad(self) * jac;
  });
}

BBox center_to_corners(double cx, double cy, double w, double h) {
  return BBox{std::clamp(cx - 0.5 * w, 0.0, 1.0), std::clamp(cy - 0.5 * h, 0.0, 1.0),
              std::clamp(cx + 0.5 * w, 0.0, 1.0), std::clamp(cy + 0.5 * h, 0.0, 1.0)};
}

RegionProposal propose_region(Graph& g, ParamStore& ps, const AlmHeads& heads,
                              const VisualEncoding& vis, const TextLayoutEncoding& text,
                              Var p_l) {
  RegionProposal rp;
  const Eigen::Index q = vis.h_v.rows();
  Var gate_bias = nn::matmul(g.constant(Mat::Ones(q, 1)), g.param(ps.at("alm.b_v")));
  Var gate = nn::sigmoid(nn::matmul(vis.h_v, g.param(ps.at("alm.w_v"))) + gate_bias);
  rp.h_visual = nn::matmul(nn::transpose(gate), vis.h_v);
  rp.h_spatial = nn::matmul(nn::transpose(p_l), text.h_lay);
  rp.h_a = nn::concat_cols(rp.h_visual, rp.h_spatial);
  Var hidden = nn::gelu(nn::apply(g, ps, heads.bbox_in, rp.h_a));
  rp.raw = nn::sigmoid(nn::apply(g, ps, heads.bbox_out, hidden));
  rp.box = center_to_corners(rp.raw);
  return rp;
}

namespace {
using D4 = Dual<4>;

BoxT<D4> dual_box(const Mat& corners) {
  return BoxT<D4>{D4::variable(corners(0, 0), 0), D4::variable(corners(0, 1), 1),
                  D4::variable(corners(0, 2), 2), D4::variable(corners(0, 3), 3)};
}

BoxT<D4> const_box(const BBox& b) { return BoxT<D4>{b.x1, b.y1, b.x2, b.y2}; }
}  // namespace

Var visual_probs(Var box, const std::vector<SceneTextToken>& tokens) {
  Graph& g = *box.g;
  const BoxT<D4> region = dual_box(box.value());
  const Eigen::Index m = static_cast<Eigen::Index>(tokens.size());
  Mat out(m, 1);
  Mat jac(m, 4);
  for (Eigen::Index i = 0; i < m; ++i) {
    const D4 v = iou_hat(region, const_box(tokens[static_cast<std::size_t>(i)].box));
    out(i, 0) = v.v;
    for (int k = 0; k < 4; ++k) jac(i, k) = v.d[static_cast<std::size_t>(k)];
  }
  return g.record(std::move(out), {box}, [box, jac](Graph& g, int self) {
    g.grad(box.id) += g.grad(self).transpose() * jac;
  });
}

std::vector<double> visual_probs(const BBox& box, const std::vector<SceneTextToken>& tokens) {
  std::vector<double> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(iou_hat(box, t.box));
  return out;
}

Var soft_switch(Graph& g, ParamStore& ps, const AlmHeads& heads, Var h_text_cls,
                Var h_visual_cls) {
  Var fused = nn::matmul(h_text_cls, g.param(ps.at("alm.w_cls_text"))) +
              nn::matmul(h_visual_cls, g.param(ps.at("alm.w_cls_vis")));
  Var hidden = nn::gelu(nn::apply(g, ps, heads.cls_in, fused));
  return nn::sigmoid(nn::apply(g, ps, heads.cls_out, hidden));
}

Var mix_probs(Var p_s, Var p_v, Var p_l) {
  if (p_v.rows() != p_l.rows()) throw std::invalid_argument("mix_probs: length mismatch");
  Var one_minus = nn::add_scalar(nn::scale(p_s, -1.0), 1.0);
  return nn::mul_scalar(p_v, p_s) + nn::mul_scalar(p_l, one_minus);
}

std::vector<double> mix_probs(double p_s, std::span<const double> p_v,
                              std::span<const double> p_l) {
  if (p_v.size() != p_l.size()) throw std::invalid_argument("mix_probs: length mismatch");
  std::vector<double> out(p_v.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = p_v[i] * p_s + p_l[i] * (1.0 - p_s);
  return out;
}

Selection select_words(std::span<const double> probs, const std::vector<SceneTextToken>& tokens,
                       double threshold) {
  if (probs.size() != tokens.size()) throw std::invalid_argument("select_words: length mismatch");
  std::vector<int> chosen;
  for (std::size_t i = 0; i < probs.size(); ++i)
    if (probs[i] > threshold) chosen.push_back(static_cast<int>(i));
  if (chosen.empty() && !probs.empty()) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < probs.size(); ++i)
      if (probs[i] > probs[best]) best = i;
    chosen.push_back(static_cast<int>(best));
  }
  std::sort(chosen.begin(), chosen.end(), [&](int a, int b) {
    const BBox& ba = tokens[static_cast<std::size_t>(a)].box;
    const BBox& bb = tokens[static_cast<std::size_t>(b)].box;
    if (ba.y1 != bb.y1) return ba.y1 < bb.y1;
    if (ba.x1 != bb.x1) return ba.x1 < bb.x1;
    return a < b;
  });
  Selection out;
  for (int i : chosen) out.emplace_back(i, tokens[static_cast<std::size_t>(i)].word);
  return out;
}

namespace {
template <typename T>
T box_loss_t(const BoxT<T>& box, const BBox& target, double lambda_l1, double lambda_giou) {
  auto absd = [](const T& a, double b) {
    const T d = a - T(b);
    return d < T(0) ? T(0) - d : d;
  };
  const T l1 = absd(box.x1, target.x1) + absd(box.y1, target.y1) + absd(box.x2, target.x2) +
               absd(box.y2, target.y2);
  const T gi = giou(box, BoxT<T>{target.x1, target.y1, target.x2, target.y2});
  return T(lambda_l1) * l1 + T(lambda_giou) * (T(1.0) - gi);
}
}  // namespace

Var box_loss(Var box, const BBox& target, double lambda_l1, double lambda_giou) {
  Graph& g = *box.g;
  const D4 v = box_loss_t(dual_box(box.value()), target, lambda_l1, lambda_giou);
  Mat out(1, 1);
  out(0, 0) = v.v;
  Mat jac(1, 4);
  for (int k = 0; k < 4; ++k) jac(0, k) = v.d[static_cast<std::size_t>(k)];
  return g.record(std::move(out), {box}, [box, jac](Graph& g, int self) {
    g.grad(box.id) += g.grad(self)(0, 0) * jac;
  });
}

double box_loss(const BBox& box, const BBox& target, double lambda_l1, double lambda_giou) {
  return box_loss_t(box, target, lambda_l1, lambda_giou);
}

AlmLoss alm_loss(const AlmGraph& out, const AlmTargets& targets, const AlmLossConfig& cfg) {
  AlmLoss loss;
  Var lb = box_loss(out.box, targets.answer_box, cfg.lambda_l1, cfg.lambda_giou);
  Var ls = nn::binary_nll(out.p_w, targets.tags, cfg.clamp_eps);
  loss.bbox = lb.scalar();
  loss.selection = ls.scalar();
  loss.total = lb + ls;
  if (cfg.aux_linguistic_loss)
    loss.total = loss.total + nn::binary_nll(out.p_l, targets.tags, cfg.clamp_eps);
  return loss;
}

std::string_view to_string(SelectionSource s) {
  switch (s) {
    case SelectionSource::None: return "none";
    case SelectionSource::Visual: return "visual";
    case SelectionSource::Linguistic: return "linguistic";
    case SelectionSource::Mixed: return "mixed";
  }
  return "mixed";
}

SelectionSource parse_selection_source(std::string_view s) {
  if (s == "none") return SelectionSource::None;
  if (s == "visual") return SelectionSource::Visual;
  if (s == "linguistic") return SelectionSource::Linguistic;
  if (s == "mixed") return SelectionSource::Mixed;
  throw std::invalid_argument("unknown selection source: " + std::string(s));
}

Selection select_by(const AlmOutput& out, const std::vector<SceneTextToken>& tokens,
                    SelectionSource source, double threshold) {
  switch (source) {
    case SelectionSource::None: return {};
    case SelectionSource::Visual: return select_words(out.p_v, tokens, threshold);
    case SelectionSource::Linguistic: return select_words(out.p_l, tokens, threshold);
    case SelectionSource::Mixed: return select_words(out.p_w, tokens, threshold);
  }
  return {};
}

// ---------------------------------------------------------------------------
// AlmModel

AlmModel::AlmModel(const ModelConfig& model, const AlmLossConfig& loss, std::uint64_t seed)
    : model_cfg_(model), loss_cfg_(loss) {
  validate(model);
  validate(loss);
  std::mt19937_64 rng(seed);
  text_ = TextLayoutEncoder(params_, model, rng);
  visual_ = VisualEncoder(params_, model, rng);
  heads_ = make_alm_heads(params_, model.dim, rng);
}

AlmGraph AlmModel::forward(Graph& g, const SceneInstance& scene) {
  TextLayoutEncoding text = text_.encode(g, params_, scene.question, scene.tokens);
  VisualEncoding vis = visual_.encode(g, params_, scene.question, scene.visual_grid);
  AlmGraph out;
  out.p_l = linguistic_probs(g, params_, text);
  RegionProposal rp = propose_region(g, params_, heads_, vis, text, out.p_l);
  out.box = rp.box;
  out.h_a = rp.h_a;
  out.p_v = visual_probs(rp.box, scene.tokens);
  out.p_s = soft_switch(g, params_, heads_, text.h_cls, vis.h_cls);
  out.p_w = mix_probs(out.p_s, out.p_v, out.p_l);
  return out;
}

AlmOutput to_output(const AlmGraph& g, const std::vector<SceneTextToken>& tokens,
                    double threshold) {
  AlmOutput o;
  auto col = [](const Mat& m) { return std::vector<double>(m.data(), m.data() + m.size()); };
  o.p_l = col(g.p_l.value());
  o.p_v = col(g.p_v.value());
  o.p_w = col(g.p_w.value());
  o.p_s = g.p_s.scalar();
  const Mat& b = g.box.value();
  o.b_p = BBox{b(0, 0), b(0, 1), b(0, 2), b(0, 3)};
  o.h_a = col(g.h_a.value());
  o.selected = select_words(o.p_w, tokens, threshold);
  return o;
}

AlmOutput AlmModel::predict(const SceneInstance& scene) {
  Graph g;
  AlmGraph out = forward(g, scene);
  return to_output(out, scene.tokens, loss_cfg_.select_threshold);
}

AlmLossValues AlmModel::accumulate(const SceneInstance& scene, const AlmTargets& targets) {
  Graph g;
  AlmGraph out = forward(g, scene);
  AlmLoss loss = alm_loss(out, targets, loss_cfg_);
  g.backward(loss.total);
  return {loss.total.scalar(), loss.bbox, loss.selection};
}

double AlmModel::loss_value(const SceneInstance& scene, const AlmTargets& targets) {
  Graph g;
  AlmGraph out = forward(g, scene);
  return alm_loss(out, targets, loss_cfg_).total.scalar();
}

}  // namespace ltg
