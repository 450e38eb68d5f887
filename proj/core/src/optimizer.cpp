#include "ltg/optimizer.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace ltg {

nlohmann::json to_json(const OptimizerConfig& c) {
  return {{"kind", c.kind},
          {"learning_rate", c.learning_rate},
          {"momentum", c.momentum},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"clip_norm", c.clip_norm},
          {"cosine_decay", c.cosine_decay},
          {"warmup_fraction", c.warmup_fraction}};
}

OptimizerConfig optimizer_config_from_json(const nlohmann::json& j) {
  OptimizerConfig c;
  c.kind = j.value("kind", c.kind);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.beta2 = j.value("beta2", c.beta2);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.cosine_decay = j.value("cosine_decay", c.cosine_decay);
  c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
  if (c.kind != "momentum" && c.kind != "adam")
    throw std::invalid_argument("optimizer kind must be 'momentum' or 'adam'");
  return c;
}

double scheduled_lr(const OptimizerConfig& c, long step, long total) {
  if (total <= 0) return c.learning_rate;
  const long warmup = static_cast<long>(c.warmup_fraction * static_cast<double>(total));
  if (step < warmup) return c.learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (!c.cosine_decay) return c.learning_rate;
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(std::max<long>(1, total - warmup));
  return c.learning_rate * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(1.0, progress)));
}

Optimizer::Optimizer(const OptimizerConfig& cfg, const nn::ParamStore& params) : cfg_(cfg) {
  for (const auto& e : params.entries()) {
    m_.push_back(nn::Mat::Zero(e.value.rows(), e.value.cols()));
    if (cfg.kind == "adam") v_.push_back(nn::Mat::Zero(e.value.rows(), e.value.cols()));
  }
}

double Optimizer::step(nn::ParamStore& params, double lr) {
  auto& entries = params.entries();
  double sq = 0.0;
  for (const auto& e : entries) sq += e.grad.squaredNorm();
  const double norm = std::sqrt(sq);
  const double clip = (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;
  ++t_;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& e = entries[i];
    if (cfg_.kind == "adam") {
      m_[i] = cfg_.momentum * m_[i] + (1.0 - cfg_.momentum) * clip * e.grad;
      v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * (clip * e.grad).cwiseAbs2();
      const double bc1 = 1.0 - std::pow(cfg_.momentum, static_cast<double>(t_));
      const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
      e.value.array() -= lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.epsilon);
    } else {
      m_[i] = cfg_.momentum * m_[i] + clip * e.grad;
      e.value -= lr * m_[i];
    }
  }
  return norm;
}

}  // namespace ltg
