#pragma once

#include <cstdint>
#include <vector>

#include "protofl/data/datasets.hpp"
#include "protofl/diff/optim.hpp"
#include "protofl/losses/losses.hpp"
#include "protofl/ocnf/flow.hpp"
#include "protofl/repr/augment.hpp"
#include "protofl/repr/encoder.hpp"

namespace protofl::ocnf {

struct OcnfConfig {
  FlowConfig flow;
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  diff::OptimizerConfig optimizer = diff::OptimizerConfig::sgd(5e-3);
  losses::Phase2Weights weights;
  repr::AugmentPolicy augment;
  std::uint64_t seed = 0;

  void validate() const;
};

struct TrainingLog {
  // [0] is the objective on the full shard before any update (one fixed
  // augmentation draw); [e] for e >= 1 is the mean batch loss of epoch e.
  std::vector<double> epoch_losses;
};

struct TrainedFlow {
  FlowModel model;
  TrainingLog log;
};

// Phase-2 local training: the encoder is frozen (it receives no gradient)
// and only the flow parameters descend on loss_mle + lambda * loss_reg over
// two augmented views of the client's samples. Randomness comes from the
// stream keyed by (seed, client id). Throws NumericError naming the epoch if
// the loss becomes non-finite.
TrainedFlow train_ocnf(std::uint64_t client_id, const repr::Encoder& frozen_encoder, const Tensor& samples,
                       const OcnfConfig& config);

// Same, starting from a given flow instead of a fresh initialization.
TrainedFlow train_ocnf(std::uint64_t client_id, const repr::Encoder& frozen_encoder, const Tensor& samples,
                       const OcnfConfig& config, FlowModel initial);

// Negative log-likelihood up to the dropped constant,
// ||t^-1(r)||^2 / 2 - log|det J_{t^-1}(r)|; higher means more anomalous.
double nll_score(const FlowModel& model, const Tensor& latent);
std::vector<double> nll_scores(const FlowModel& model, const Tensor& latents);

// Raw sample -> encoder -> flow NLL. No augmentation at test time.
double score(const FlowModel& model, const repr::Encoder& encoder, const Tensor& sample);
std::vector<double> score_batch(const FlowModel& model, const repr::Encoder& encoder, const Tensor& samples);

// Single Gaussian with sample mean and diagonal variance (population
// variance plus 1e-6 on the diagonal). Score is the negative log density.
class GaussianDensity {
 public:
  static GaussianDensity fit(const Tensor& latents);
  double score(std::span<const double> x) const;
  const std::vector<double>& mean() const noexcept { return mean_; }
  const std::vector<double>& variance() const noexcept { return var_; }

 private:
  std::vector<double> mean_;
  std::vector<double> var_;
};

// Isotropic Gaussian kernel density; score is -log of the mean kernel value.
class KernelDensity {
 public:
  // bandwidth <= 0 selects Scott's rule on the mean per-coordinate std.
  static KernelDensity fit(const Tensor& latents, double bandwidth);
  double score(std::span<const double> x) const;
  double bandwidth() const noexcept { return bandwidth_; }

 private:
  Tensor points_;
  double bandwidth_ = 1.0;
};

// ContractError on fewer than two training latents.
double gde_score(const Tensor& train_latents, const Tensor& test_latent);
double kde_score(const Tensor& train_latents, const Tensor& test_latent, double bandwidth);

}  // namespace protofl::ocnf
