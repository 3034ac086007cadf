#include "protofl/repr/augment.hpp"

#include "protofl/errors.hpp"

namespace protofl::repr {

AugmentPolicy AugmentPolicy::from_name(const std::string& name, double sigma, double dropout_rate) {
  AugmentPolicy p;
  p.sigma = sigma;
  p.dropout_rate = dropout_rate;
  if (name == "identity") {
    p.kind = AugmentKind::kIdentity;
  } else if (name == "gaussian-noise") {
    p.kind = AugmentKind::kGaussianNoise;
  } else if (name == "noise-dropout") {
    p.kind = AugmentKind::kNoiseDropout;
  } else {
    throw ConfigError("unknown augmentation policy '" + name + "'");
  }
  p.validate();
  return p;
}

std::string AugmentPolicy::name() const {
  switch (kind) {
    case AugmentKind::kIdentity: return "identity";
    case AugmentKind::kGaussianNoise: return "gaussian-noise";
    case AugmentKind::kNoiseDropout: return "noise-dropout";
  }
  return "identity";
}

void AugmentPolicy::validate() const {
  if (!(sigma >= 0.0)) throw ConfigError("augmentation sigma must be >= 0");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("augmentation dropout rate must be in [0,1)");
}

Tensor augment(const Tensor& sample, const AugmentPolicy& policy, Rng& rng) {
  Tensor out = sample;
  if (policy.kind == AugmentKind::kIdentity) return out;
  if (policy.sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, policy.sigma);
    for (auto& v : out.data()) v += noise(rng);
  }
  if (policy.kind == AugmentKind::kNoiseDropout && policy.dropout_rate > 0.0) {
    std::bernoulli_distribution drop(policy.dropout_rate);
    for (auto& v : out.data()) {
      if (drop(rng)) v = 0.0;
    }
  }
  return out;
}

ViewPair augment_pair(const Tensor& sample, const AugmentPolicy& policy, Rng& rng) {
  Tensor x = augment(sample, policy, rng);
  Tensor x_hat = augment(sample, policy, rng);
  return {std::move(x), std::move(x_hat)};
}

}  // namespace protofl::repr
