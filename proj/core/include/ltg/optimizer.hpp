#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ltg/autograd.hpp"

namespace ltg {

struct OptimizerConfig {
  std::string kind = "adam";  // "momentum" or "adam"
  double learning_rate = 1e-3;
  double momentum = 0.9;  // beta1 for adam
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;  // global gradient norm; <= 0 disables
  bool cosine_decay = true;
  double warmup_fraction = 0.05;

  bool operator==(const OptimizerConfig&) const = default;
};

nlohmann::json to_json(const OptimizerConfig& c);
OptimizerConfig optimizer_config_from_json(const nlohmann::json& j);

/// Learning rate at `step` of `total`: linear warmup then cosine to zero.
double scheduled_lr(const OptimizerConfig& c, long step, long total);

class Optimizer {
 public:
  Optimizer(const OptimizerConfig& cfg, const nn::ParamStore& params);
  /// Applies one update from params.grad (already averaged) and returns the
  /// pre-clipping gradient norm.
  double step(nn::ParamStore& params, double lr);

 private:
  OptimizerConfig cfg_;
  std::vector<nn::Mat> m_;
  std::vector<nn::Mat> v_;
  long t_ = 0;
};

}  // namespace ltg
