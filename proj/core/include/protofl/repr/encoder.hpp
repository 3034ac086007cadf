#pragma once

#include <vector>

#include "protofl/diff/ops.hpp"
#include "protofl/repr/param_vector.hpp"
#include "protofl/rng.hpp"

namespace protofl::repr {

struct EncoderConfig {
  std::size_t input_dim = 16;
  std::vector<std::size_t> hidden_dims{64, 64};
  std::size_t output_dim = 32;
  // Group-normalization groups; must divide every hidden width.
  std::size_t groups = 8;

  void validate() const;
  // Deterministic function of the config: equal configs give equal layouts.
  ParamLayout layout() const;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Client representation network: repeated [linear -> group norm (with
// per-channel affine) -> relu] blocks followed by an unnormalized linear head
// producing a D-dimensional latent.
class Encoder {
 public:
  // Throws DimensionError when `params` does not carry config.layout().
  Encoder(EncoderConfig config, ParamVector params);

  static Encoder initialize(const EncoderConfig& config, Rng& rng);

  const EncoderConfig& config() const noexcept { return config_; }
  const ParamVector& params() const noexcept { return params_; }
  ParamVector& mutable_params() noexcept { return params_; }

  // Differentiable forward of a [rows, input_dim] batch given entries already
  // bound on `tape`.
  diff::Var forward(const std::vector<diff::Var>& bound, const diff::Var& x) const;

  // Gradient-free evaluation. Rank-1 input gives a rank-1 latent, rank-2 a
  // [rows, D] batch.
  Tensor encode(const Tensor& x) const;

  ParamVector flatten() const { return params_; }
  static Encoder unflatten(const ParamVector& params, const EncoderConfig& config);

 private:
  EncoderConfig config_;
  ParamVector params_;
};

}  // namespace protofl::repr
