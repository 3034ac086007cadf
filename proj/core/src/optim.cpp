#include "protofl/diff/optim.hpp"

#include <cmath>
#include <sstream>

#include "protofl/errors.hpp"

namespace protofl::diff {

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kSgd ? "sgd" : "radam";
}

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "sgd") return OptimizerKind::kSgd;
  if (name == "radam") return OptimizerKind::kRAdam;
  throw ConfigError("unknown optimizer '" + name + "' (expected sgd or radam)");
}

void OptimizerConfig::validate() const {
  std::ostringstream errs;
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) errs << " learning_rate must be >= 0;";
  if (!(momentum >= 0.0 && momentum < 1.0)) errs << " momentum must be in [0,1);";
  if (!(beta1 >= 0.0 && beta1 < 1.0)) errs << " beta1 must be in [0,1);";
  if (!(beta2 >= 0.0 && beta2 < 1.0)) errs << " beta2 must be in [0,1);";
  if (!(weight_decay >= 0.0)) errs << " weight_decay must be >= 0;";
  if (!(eps > 0.0)) errs << " eps must be > 0;";
  if (const auto s = errs.str(); !s.empty()) throw ConfigError("optimizer:" + s);
}

OptimizerConfig OptimizerConfig::sgd(double lr, double momentum, double weight_decay) {
  OptimizerConfig c;
  c.kind = OptimizerKind::kSgd;
  c.learning_rate = lr;
  c.momentum = momentum;
  c.weight_decay = weight_decay;
  return c;
}

OptimizerConfig OptimizerConfig::radam(double lr, double beta1, double beta2, double weight_decay) {
  OptimizerConfig c;
  c.kind = OptimizerKind::kRAdam;
  c.learning_rate = lr;
  c.beta1 = beta1;
  c.beta2 = beta2;
  c.weight_decay = weight_decay;
  return c;
}

Optimizer::Optimizer(OptimizerConfig config) : config_(config) { config_.validate(); }

void Optimizer::prepare(std::span<double> params, std::span<const double> grads, std::size_t buffers) {
  if (params.size() != grads.size()) {
    throw DimensionError("optimizer: " + std::to_string(params.size()) + " params vs " +
                         std::to_string(grads.size()) + " grads");
  }
  if (steps_ == 0 && first_.empty()) {
    if (buffers >= 1) first_.assign(params.size(), 0.0);
    if (buffers >= 2) second_.assign(params.size(), 0.0);
  }
  if ((buffers >= 1 && first_.size() != params.size()) || (buffers >= 2 && second_.size() != params.size())) {
    throw DimensionError("optimizer: parameter count changed between steps");
  }
}

void Optimizer::step(std::span<double> params, std::span<const double> grads) {
  if (config_.kind == OptimizerKind::kSgd) {
    sgd_step(params, grads);
  } else {
    radam_step(params, grads);
  }
}

void Optimizer::sgd_step(std::span<double> params, std::span<const double> grads) {
  if (config_.kind != OptimizerKind::kSgd) throw ContractError("sgd_step on a non-SGD optimizer");
  const bool heavy_ball = config_.momentum > 0.0;
  prepare(params, grads, heavy_ball ? 1 : 0);
  const double lr = config_.learning_rate, wd = config_.weight_decay, mu = config_.momentum;
  for (std::size_t i = 0; i < params.size(); ++i) {
    double g = grads[i] + wd * params[i];
    if (heavy_ball) {
      first_[i] = mu * first_[i] + g;
      g = first_[i];
    }
    params[i] -= lr * g;
  }
  ++steps_;
}

void Optimizer::radam_step(std::span<double> params, std::span<const double> grads) {
  if (config_.kind != OptimizerKind::kRAdam) throw ContractError("radam_step on a non-RAdam optimizer");
  prepare(params, grads, 2);
  ++steps_;
  const double b1 = config_.beta1, b2 = config_.beta2, lr = config_.learning_rate, wd = config_.weight_decay;
  const double t = static_cast<double>(steps_);
  const double b1t = std::pow(b1, t), b2t = std::pow(b2, t);
  const double rho_inf = 2.0 / (1.0 - b2) - 1.0;
  const double rho_t = rho_inf - 2.0 * t * b2t / (1.0 - b2t);
  const bool rectified = rho_t > 5.0;
  double rect = 0.0;
  if (rectified) {
    rect = std::sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grads[i] + wd * params[i];
    first_[i] = b1 * first_[i] + (1.0 - b1) * g;
    second_[i] = b2 * second_[i] + (1.0 - b2) * g * g;
    const double m_hat = first_[i] / (1.0 - b1t);
    if (rectified) {
      const double adaptive = std::sqrt(1.0 - b2t) / (std::sqrt(second_[i]) + config_.eps);
      params[i] -= lr * rect * adaptive * m_hat;
    } else {
      params[i] -= lr * m_hat;
    }
  }
}

}  // namespace protofl::diff
