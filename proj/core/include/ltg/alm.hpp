#pragma once

// Answer location: linguistic token probabilities, a gated visual/spatial
// region proposal, box-to-token probabilities, the soft switch that mixes the
// two, word selection, and the combined box + selection loss.
//
// Formula-to-function map: docs/method_map.md#answer-location.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltg/autograd.hpp"
#include "ltg/dataworld.hpp"
#include "ltg/encoders.hpp"
#include "ltg/geometry.hpp"
#include "ltg/preprocess.hpp"

namespace ltg {

struct AlmLossConfig {
  double lambda_l1 = 5.0;
  double lambda_giou = 2.0;
  double select_threshold = 0.5;
  double clamp_eps = 1e-7;
  /// Adds a selection loss on P_l alone; off by default.
  bool aux_linguistic_loss = false;

  bool operator==(const AlmLossConfig&) const = default;
};

nlohmann::json to_json(const AlmLossConfig& c);
AlmLossConfig alm_loss_config_from_json(const nlohmann::json& j);
void validate(const AlmLossConfig& c);

using Selection = std::vector<std::pair<int, std::string>>;

/// Plain-value view of one forward pass.
struct AlmOutput {
  std::vector<double> p_l;
  std::vector<double> p_v;
  double p_s = 0.5;
  std::vector<double> p_w;
  BBox b_p;
  std::vector<double> h_a;
  Selection selected;
};

/// Graph-level result of one forward pass.
struct AlmGraph {
  nn::Var p_l;  // m x 1
  nn::Var p_v;  // m x 1
  nn::Var p_s;  // 1 x 1
  nn::Var p_w;  // m x 1
  nn::Var box;  // 1 x 4 corners
  nn::Var h_a;  // 1 x 2d
};

struct RegionProposal {
  nn::Var h_visual;   // 1 x d, gated sum over decoder queries
  nn::Var h_spatial;  // 1 x d, P_l-weighted sum of layout states
  nn::Var h_a;        // 1 x 2d
  nn::Var raw;        // 1 x 4, sigmoid outputs (cx, cy, w, h)
  nn::Var box;        // 1 x 4, clipped corners
};

struct AlmHeads {
  nn::Linear bbox_in, bbox_out;  // two-layer box regressor
  nn::Linear cls_in, cls_out;    // two-layer switch network
};

AlmHeads make_alm_heads(nn::ParamStore& ps, int dim, std::mt19937_64& rng);

/// sigmoid(w_l . [h_lang, h_lay] + b_l) per token.
nn::Var linguistic_probs(nn::Graph& g, nn::ParamStore& ps, const TextLayoutEncoding& enc);

RegionProposal propose_region(nn::Graph& g, nn::ParamStore& ps, const AlmHeads& heads,
                              const VisualEncoding& vis, const TextLayoutEncoding& text,
                              nn::Var p_l);

/// (cx, cy, w, h) -> clipped (x1, y1, x2, y2); zero gradient where clipped.
nn::Var center_to_corners(nn::Var raw);
BBox center_to_corners(double cx, double cy, double w, double h);

/// iou_hat(box, token box) per token, differentiable in `box`.
nn::Var visual_probs(nn::Var box, const std::vector<SceneTextToken>& tokens);
std::vector<double> visual_probs(const BBox& box, const std::vector<SceneTextToken>& tokens);

nn::Var soft_switch(nn::Graph& g, nn::ParamStore& ps, const AlmHeads& heads,
                    nn::Var h_text_cls, nn::Var h_visual_cls);

nn::Var mix_probs(nn::Var p_s, nn::Var p_v, nn::Var p_l);
/// Throws std::invalid_argument on length mismatch.
std::vector<double> mix_probs(double p_s, std::span<const double> p_v,
                              std::span<const double> p_l);

/// Tokens with probability above `threshold`, or the first argmax when none
/// clears it; returned in reading order. Empty token list selects nothing.
Selection select_words(std::span<const double> probs, const std::vector<SceneTextToken>& tokens,
                       double threshold);

/// lambda_l1 * L1(box, target) + lambda_giou * (1 - GIoU(box, target)).
nn::Var box_loss(nn::Var box, const BBox& target, double lambda_l1, double lambda_giou);
double box_loss(const BBox& box, const BBox& target, double lambda_l1, double lambda_giou);

struct AlmLoss {
  nn::Var total;
  double bbox = 0.0;
  double selection = 0.0;
};

AlmLoss alm_loss(const AlmGraph& out, const AlmTargets& targets, const AlmLossConfig& cfg);

struct AlmLossValues {
  double total = 0.0;
  double bbox = 0.0;
  double selection = 0.0;
};

/// Which probability drives word selection (ablation variants).
enum class SelectionSource { None, Visual, Linguistic, Mixed };
std::string_view to_string(SelectionSource s);
SelectionSource parse_selection_source(std::string_view s);
Selection select_by(const AlmOutput& out, const std::vector<SceneTextToken>& tokens,
                    SelectionSource source, double threshold);

/// Encoders plus heads over a single parameter store.
class AlmModel {
 public:
  AlmModel(const ModelConfig& model, const AlmLossConfig& loss, std::uint64_t seed);

  const ModelConfig& model_config() const { return model_cfg_; }
  const AlmLossConfig& loss_config() const { return loss_cfg_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }

  AlmGraph forward(nn::Graph& g, const SceneInstance& scene);
  AlmOutput predict(const SceneInstance& scene);
  /// Loss and gradients (accumulated into params().grad) for one instance.
  AlmLossValues accumulate(const SceneInstance& scene, const AlmTargets& targets);
  double loss_value(const SceneInstance& scene, const AlmTargets& targets);

 private:
  ModelConfig model_cfg_;
  AlmLossConfig loss_cfg_;
  nn::ParamStore params_;
  TextLayoutEncoder text_;
  VisualEncoder visual_;
  AlmHeads heads_;
};

AlmOutput to_output(const AlmGraph& g, const std::vector<SceneTextToken>& tokens,
                    double threshold);

}  // namespace ltg
