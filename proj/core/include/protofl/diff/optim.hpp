#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace protofl::diff {

enum class OptimizerKind { kSgd, kRAdam };

std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double learning_rate = 1e-3;
  // SGD momentum, or RAdam beta1.
  double momentum = 0.0;
  double beta1 = 0.94;
  double beta2 = 0.98;
  double weight_decay = 0.0;
  double eps = 1e-8;

  // Throws ConfigError when a field is out of range.
  void validate() const;

  static OptimizerConfig sgd(double lr, double momentum = 0.0, double weight_decay = 0.0);
  static OptimizerConfig radam(double lr, double beta1 = 0.94, double beta2 = 0.98, double weight_decay = 1e-3);
};

// Stateful optimizer over one flat parameter vector. Moment buffers are
// sized on the first step and must shape-match every later call.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config);

  // Dispatches on the configured kind.
  void step(std::span<double> params, std::span<const double> grads);

  // p <- p - lr * (g + wd * p), with an optional heavy-ball buffer.
  void sgd_step(std::span<double> params, std::span<const double> grads);

  // Rectified Adam. Weight decay is added to the gradient before the moment
  // updates. While the variance rectification term is undefined
  // (rho_t <= 5) the update is the bias-corrected first moment only.
  void radam_step(std::span<double> params, std::span<const double> grads);

  const OptimizerConfig& config() const noexcept { return config_; }
  std::uint64_t step_count() const noexcept { return steps_; }

 private:
  void prepare(std::span<double> params, std::span<const double> grads, std::size_t buffers);

  OptimizerConfig config_;
  std::uint64_t steps_ = 0;
  std::vector<double> first_;
  std::vector<double> second_;
};

}  // namespace protofl::diff
