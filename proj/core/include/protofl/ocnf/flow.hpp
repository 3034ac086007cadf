#pragma once

#include <vector>

#include "protofl/diff/ops.hpp"
#include "protofl/repr/param_vector.hpp"
#include "protofl/rng.hpp"

namespace protofl::ocnf {

using diff::Tensor;
using diff::Var;

struct FlowConfig {
  std::size_t dim = 32;
  std::size_t layers = 8;
  std::vector<std::size_t> hidden_dims{64, 64};
  // Scale outputs are soft-clamped to (-clamp, clamp) via clamp * tanh(s / clamp).
  double scale_clamp = 2.0;

  void validate() const;
  repr::ParamLayout layout() const;

  friend bool operator==(const FlowConfig&, const FlowConfig&) = default;
};

// Stack of affine coupling layers. Layer l keeps the coordinates where its
// mask is 1 and transforms the rest with a scale and translation computed
// from the kept half; masks alternate between the first and second half.
//
// Direction convention: inverse() maps data-side r to base-side z, applying
// layers 0..L-1 in order, each as
//   y' = (y - t(y*b)) * exp(-s(y*b))      on coordinates with b = 0
// so the inverse log|det J| is -sum(s) over transformed coordinates.
// forward() applies the exact algebraic inverse, layers L-1..0.
class FlowModel {
 public:
  FlowModel(FlowConfig config, repr::ParamVector params);

  // Hidden layers random, output layers of both subnets zero: the freshly
  // initialized flow is the identity map.
  static FlowModel initialize(const FlowConfig& config, Rng& rng);

  const FlowConfig& config() const noexcept { return config_; }
  const repr::ParamVector& params() const noexcept { return params_; }
  repr::ParamVector& mutable_params() noexcept { return params_; }

  const Tensor& mask(std::size_t layer) const { return masks_.at(layer); }

  struct InverseVars {
    Var z;
    Var logdet;  // [rows]
  };
  InverseVars inverse(const std::vector<Var>& bound, const Var& r) const;
  Var forward(const std::vector<Var>& bound, const Var& z) const;

  struct InverseResult {
    Tensor z;
    Tensor logdet;  // [rows], or rank-0 for rank-1 input
  };
  // Rank-1 or rank-2 inputs; throws NumericError naming the layer on a
  // non-finite intermediate.
  InverseResult flow_inverse(const Tensor& r) const;
  Tensor flow_forward(const Tensor& z) const;

 private:
  struct LayerEntries {
    std::size_t scale_first;      // first linear layer of the scale subnet
    std::size_t translate_first;  // first linear layer of the translate subnet
  };
  Var subnet(const std::vector<Var>& bound, std::size_t first, const Var& x) const;
  // Returns (masked soft-clamped scale, masked translation) for layer l.
  std::pair<Var, Var> scale_translate(const std::vector<Var>& bound, std::size_t l, const Var& kept) const;

  FlowConfig config_;
  repr::ParamVector params_;
  std::vector<Tensor> masks_;
  std::vector<LayerEntries> entries_;
};

}  // namespace protofl::ocnf
