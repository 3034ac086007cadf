#include "protofl/ocnf/flow.hpp"

#include <sstream>

#include "protofl/errors.hpp"
#include "protofl/repr/mlp.hpp"

namespace protofl::ocnf {

void FlowConfig::validate() const {
  std::ostringstream errs;
  if (dim < 2) errs << " dim must be >= 2 (each mask needs a kept and a transformed coordinate);";
  if (layers == 0) errs << " layers must be >= 1;";
  for (auto h : hidden_dims) {
    if (h == 0) errs << " hidden dims must be positive;";
  }
  if (!(scale_clamp > 0.0)) errs << " scale_clamp must be > 0;";
  if (const auto s = errs.str(); !s.empty()) throw ConfigError("flow:" + s);
}

repr::ParamLayout FlowConfig::layout() const {
  validate();
  repr::ParamLayout layout;
  for (std::size_t l = 0; l < layers; ++l) {
    for (const char* net : {"s", "t"}) {
      const std::string prefix = "c" + std::to_string(l) + "." + net;
      std::size_t in = dim;
      for (std::size_t i = 0; i < hidden_dims.size(); ++i) {
        repr::add_linear(layout, prefix + ".fc" + std::to_string(i), in, hidden_dims[i]);
        in = hidden_dims[i];
      }
      repr::add_linear(layout, prefix + ".out", in, dim);
    }
  }
  return layout;
}

FlowModel::FlowModel(FlowConfig config, repr::ParamVector params)
    : config_(std::move(config)), params_(std::move(params)) {
  if (!(params_.layout() == config_.layout())) {
    throw DimensionError("flow parameters do not match the configured layout");
  }
  const std::size_t half = config_.dim / 2;
  const std::size_t per_net = 2 * (config_.hidden_dims.size() + 1);
  for (std::size_t l = 0; l < config_.layers; ++l) {
    Tensor m(diff::Shape{config_.dim}, 0.0);
    for (std::size_t j = 0; j < config_.dim; ++j) m[j] = ((j < half) != (l % 2 == 1)) ? 1.0 : 0.0;
    masks_.push_back(std::move(m));
    entries_.push_back({2 * l * per_net, (2 * l + 1) * per_net});
  }
}

FlowModel FlowModel::initialize(const FlowConfig& config, Rng& rng) {
  repr::ParamVector params(config.layout());
  const std::size_t depth = config.hidden_dims.size();
  std::size_t idx = 0;
  for (std::size_t net = 0; net < 2 * config.layers; ++net) {
    for (std::size_t i = 0; i < depth; ++i) {
      repr::init_linear(params, idx, rng);
      idx += 2;
    }
    repr::zero_linear(params, idx);
    idx += 2;
  }
  return FlowModel(config, std::move(params));
}

Var FlowModel::subnet(const std::vector<Var>& bound, std::size_t first, const Var& x) const {
  Var h = x;
  std::size_t idx = first;
  for (std::size_t i = 0; i < config_.hidden_dims.size(); ++i) {
    h = diff::tanh(repr::linear(h, bound, idx));
    idx += 2;
  }
  return repr::linear(h, bound, idx);
}

std::pair<Var, Var> FlowModel::scale_translate(const std::vector<Var>& bound, std::size_t l, const Var& kept) const {
  diff::Tape& tape = *kept.tape();
  Tensor free_mask = masks_[l];
  for (auto& v : free_mask.data()) v = 1.0 - v;
  const auto transformed = tape.constant(std::move(free_mask));
  const double c = config_.scale_clamp;
  auto s = diff::scale(diff::tanh(diff::scale(subnet(bound, entries_[l].scale_first, kept), 1.0 / c)), c);
  s = diff::mul_row(s, transformed);
  auto t = diff::mul_row(subnet(bound, entries_[l].translate_first, kept), transformed);
  return {s, t};
}

FlowModel::InverseVars FlowModel::inverse(const std::vector<Var>& bound, const Var& r) const {
  const auto& shape = r.shape();
  if (shape.size() != 2 || shape[1] != config_.dim) {
    throw DimensionError("flow expects [rows, " + std::to_string(config_.dim) + "], got " +
                         diff::shape_string(shape));
  }
  diff::Tape& tape = *r.tape();
  Var y = r;
  Var logdet;
  for (std::size_t l = 0; l < config_.layers; ++l) {
    try {
      const auto kept = diff::mul_row(y, tape.constant(masks_[l]));
      auto [s, t] = scale_translate(bound, l, kept);
      y = diff::mul(diff::sub(y, t), diff::exp(diff::scale(s, -1.0)));
      const auto layer_logdet = diff::scale(diff::row_sum(s), -1.0);
      logdet = l == 0 ? layer_logdet : diff::add(logdet, layer_logdet);
    } catch (const NumericError& e) {
      throw NumericError("flow layer " + std::to_string(l) + " (inverse): " + e.what());
    }
  }
  return {y, logdet};
}

Var FlowModel::forward(const std::vector<Var>& bound, const Var& z) const {
  const auto& shape = z.shape();
  if (shape.size() != 2 || shape[1] != config_.dim) {
    throw DimensionError("flow expects [rows, " + std::to_string(config_.dim) + "], got " +
                         diff::shape_string(shape));
  }
  diff::Tape& tape = *z.tape();
  Var y = z;
  for (std::size_t l = config_.layers; l-- > 0;) {
    try {
      const auto kept = diff::mul_row(y, tape.constant(masks_[l]));
      auto [s, t] = scale_translate(bound, l, kept);
      y = diff::add(diff::mul(y, diff::exp(s)), t);
    } catch (const NumericError& e) {
      throw NumericError("flow layer " + std::to_string(l) + " (forward): " + e.what());
    }
  }
  return y;
}

FlowModel::InverseResult FlowModel::flow_inverse(const Tensor& r) const {
  const bool single = r.rank() == 1;
  diff::Tape tape;
  const auto bound = repr::bind(tape, params_, false);
  const auto out = inverse(bound, tape.constant(single ? r.reshaped({1, r.size()}) : r));
  if (single) return {out.z.value().reshaped({config_.dim}), Tensor::scalar(out.logdet.value()[0])};
  return {out.z.value(), out.logdet.value()};
}

Tensor FlowModel::flow_forward(const Tensor& z) const {
  const bool single = z.rank() == 1;
  diff::Tape tape;
  const auto bound = repr::bind(tape, params_, false);
  const auto out = forward(bound, tape.constant(single ? z.reshaped({1, z.size()}) : z));
  return single ? out.value().reshaped({config_.dim}) : out.value();
}

}  // namespace protofl::ocnf
