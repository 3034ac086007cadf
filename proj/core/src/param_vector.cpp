#include "protofl/repr/param_vector.hpp"

#include <bit>

#include "protofl/errors.hpp"
#include "protofl/rng.hpp"

namespace protofl::repr {

ParamLayout::ParamLayout(std::vector<ParamEntry> entries) {
  for (auto& e : entries) add(std::move(e.name), std::move(e.shape));
}

void ParamLayout::add(std::string name, Shape shape) {
  for (const auto& e : entries_) {
    if (e.name == name) throw ContractError("duplicate parameter name '" + name + "'");
  }
  offsets_.push_back(total_);
  total_ += diff::shape_size(shape);
  entries_.push_back({std::move(name), std::move(shape)});
}

std::size_t ParamLayout::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return i;
  }
  throw ContractError("no parameter named '" + name + "'");
}

ParamVector::ParamVector(ParamLayout layout, double fill)
    : layout_(std::move(layout)), values_(layout_.total_size(), fill) {}

ParamVector::ParamVector(ParamLayout layout, std::vector<double> values)
    : layout_(std::move(layout)), values_(std::move(values)) {
  if (values_.size() != layout_.total_size()) {
    throw DimensionError("layout describes " + std::to_string(layout_.total_size()) + " values, got " +
                         std::to_string(values_.size()));
  }
}

std::span<double> ParamVector::slice(std::size_t entry) {
  return std::span<double>(values_).subspan(layout_.offset(entry), diff::shape_size(layout_.entries()[entry].shape));
}

std::span<const double> ParamVector::slice(std::size_t entry) const {
  return std::span<const double>(values_).subspan(layout_.offset(entry),
                                                  diff::shape_size(layout_.entries()[entry].shape));
}

Tensor ParamVector::tensor(std::size_t entry) const {
  const auto s = slice(entry);
  return Tensor(layout_.entries()[entry].shape, std::vector<double>(s.begin(), s.end()));
}

std::uint64_t ParamVector::checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : values_) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) {
      h ^= (bits >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

std::vector<diff::Var> bind(diff::Tape& tape, const ParamVector& params, bool trainable) {
  std::vector<diff::Var> out;
  out.reserve(params.layout().count());
  for (std::size_t i = 0; i < params.layout().count(); ++i) {
    out.push_back(trainable ? tape.leaf(params.tensor(i)) : tape.constant(params.tensor(i)));
  }
  return out;
}

std::vector<double> gather_gradients(const diff::Gradients& grads, const std::vector<diff::Var>& bound,
                                     const ParamLayout& layout) {
  if (bound.size() != layout.count()) throw DimensionError("bound parameter count does not match layout");
  std::vector<double> flat(layout.total_size(), 0.0);
  for (std::size_t i = 0; i < bound.size(); ++i) {
    const auto g = grads[bound[i]].data();
    std::copy(g.begin(), g.end(), flat.begin() + static_cast<std::ptrdiff_t>(layout.offset(i)));
  }
  return flat;
}

}  // namespace protofl::repr
