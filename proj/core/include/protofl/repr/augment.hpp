#pragma once

#include <string>

#include "protofl/diff/tensor.hpp"
#include "protofl/rng.hpp"

namespace protofl::repr {

using diff::Tensor;

enum class AugmentKind {
  kIdentity,
  // x + N(0, sigma^2) per coordinate.
  kGaussianNoise,
  // Gaussian noise, then each coordinate zeroed with probability dropout_rate.
  kNoiseDropout,
};

struct AugmentPolicy {
  AugmentKind kind = AugmentKind::kNoiseDropout;
  double sigma = 0.1;
  double dropout_rate = 0.1;

  // Accepts "identity", "gaussian-noise", "noise-dropout"; ConfigError otherwise.
  static AugmentPolicy from_name(const std::string& name, double sigma = 0.1, double dropout_rate = 0.1);
  std::string name() const;
  void validate() const;
};

// Two stochastic views of one sample.
struct ViewPair {
  Tensor x;
  Tensor x_hat;
};

// Applies the policy independently to every element of `sample` (any rank).
Tensor augment(const Tensor& sample, const AugmentPolicy& policy, Rng& rng);

// Two independent draws of augment(); the identity policy returns copies.
ViewPair augment_pair(const Tensor& sample, const AugmentPolicy& policy, Rng& rng);

}  // namespace protofl::repr
