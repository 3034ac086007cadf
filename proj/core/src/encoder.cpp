#include "protofl/repr/encoder.hpp"

#include <sstream>

#include "protofl/errors.hpp"
#include "protofl/repr/mlp.hpp"

namespace protofl::repr {

void EncoderConfig::validate() const {
  std::ostringstream errs;
  if (input_dim == 0) errs << " input_dim must be positive;";
  if (output_dim == 0) errs << " output_dim must be positive;";
  if (groups == 0) errs << " groups must be positive;";
  for (auto h : hidden_dims) {
    if (h == 0) errs << " hidden dims must be positive;";
    else if (groups != 0 && h % groups != 0) errs << " groups (" << groups << ") must divide hidden dim " << h << ";";
  }
  if (const auto s = errs.str(); !s.empty()) throw ConfigError("encoder:" + s);
}

ParamLayout EncoderConfig::layout() const {
  validate();
  ParamLayout layout;
  std::size_t in = input_dim;
  for (std::size_t i = 0; i < hidden_dims.size(); ++i) {
    const auto h = hidden_dims[i];
    add_linear(layout, "fc" + std::to_string(i), in, h);
    layout.add("gn" + std::to_string(i) + ".gamma", Shape{h});
    layout.add("gn" + std::to_string(i) + ".beta", Shape{h});
    in = h;
  }
  add_linear(layout, "head", in, output_dim);
  return layout;
}

Encoder::Encoder(EncoderConfig config, ParamVector params) : config_(std::move(config)), params_(std::move(params)) {
  if (!(params_.layout() == config_.layout())) {
    throw DimensionError("encoder parameters do not match the configured layout");
  }
}

Encoder Encoder::initialize(const EncoderConfig& config, Rng& rng) {
  ParamVector params(config.layout());
  std::size_t idx = 0;
  for (std::size_t i = 0; i < config.hidden_dims.size(); ++i) {
    init_linear(params, idx, rng);
    for (auto& g : params.slice(idx + 2)) g = 1.0;
    idx += 4;
  }
  init_linear(params, idx, rng);
  return Encoder(config, std::move(params));
}

diff::Var Encoder::forward(const std::vector<diff::Var>& bound, const diff::Var& x) const {
  const auto& shape = x.shape();
  if (shape.size() != 2 || shape[1] != config_.input_dim) {
    throw DimensionError("encoder expects [rows, " + std::to_string(config_.input_dim) + "], got " +
                         diff::shape_string(shape));
  }
  diff::Var h = x;
  std::size_t idx = 0;
  for (std::size_t i = 0; i < config_.hidden_dims.size(); ++i) {
    h = linear(h, bound, idx);
    h = diff::group_norm(h, config_.groups);
    h = diff::add_row(diff::mul_row(h, bound[idx + 2]), bound[idx + 3]);
    h = diff::relu(h);
    idx += 4;
  }
  return linear(h, bound, idx);
}

Tensor Encoder::encode(const Tensor& x) const {
  const bool single = x.rank() == 1;
  if (!single && x.rank() != 2) throw DimensionError("encode expects a rank-1 or rank-2 input");
  diff::Tape tape;
  const auto bound = bind(tape, params_, false);
  const auto in = tape.constant(single ? x.reshaped(Shape{1, x.size()}) : x);
  Tensor out = forward(bound, in).value();
  return single ? out.reshaped(Shape{config_.output_dim}) : out;
}

Encoder Encoder::unflatten(const ParamVector& params, const EncoderConfig& config) { return Encoder(config, params); }

}  // namespace protofl::repr
