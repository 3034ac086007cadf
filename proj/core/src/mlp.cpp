#include "protofl/repr/mlp.hpp"

#include <cmath>

#include "protofl/errors.hpp"

namespace protofl::repr {

std::size_t add_linear(ParamLayout& layout, const std::string& prefix, std::size_t in, std::size_t out) {
  const std::size_t idx = layout.count();
  layout.add(prefix + ".weight", Shape{in, out});
  layout.add(prefix + ".bias", Shape{out});
  return idx;
}

diff::Var linear(const diff::Var& x, const std::vector<diff::Var>& bound, std::size_t weight_entry) {
  return diff::add_row(diff::matmul(x, bound.at(weight_entry)), bound.at(weight_entry + 1));
}

void init_linear(ParamVector& params, std::size_t weight_entry, Rng& rng, double gain) {
  const auto& shape = params.layout().entries().at(weight_entry).shape;
  if (shape.size() != 2) throw ContractError("init_linear on a non-matrix entry");
  const double bound = gain / std::sqrt(static_cast<double>(shape[0]));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& w : params.slice(weight_entry)) w = dist(rng);
  for (auto& b : params.slice(weight_entry + 1)) b = dist(rng);
}

void zero_linear(ParamVector& params, std::size_t weight_entry) {
  for (auto& w : params.slice(weight_entry)) w = 0.0;
  for (auto& b : params.slice(weight_entry + 1)) b = 0.0;
}

}  // namespace protofl::repr
