#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "protofl/diff/tape.hpp"
#include "protofl/diff/tensor.hpp"

namespace protofl::repr {

using diff::Shape;
using diff::Tensor;

struct ParamEntry {
  std::string name;
  Shape shape;

  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

// Ordered (name, shape) list describing how a flat vector splits into tensors.
class ParamLayout {
 public:
  ParamLayout() = default;
  explicit ParamLayout(std::vector<ParamEntry> entries);

  void add(std::string name, Shape shape);

  const std::vector<ParamEntry>& entries() const noexcept { return entries_; }
  std::size_t count() const noexcept { return entries_.size(); }
  std::size_t total_size() const noexcept { return total_; }
  std::size_t offset(std::size_t i) const { return offsets_.at(i); }
  std::size_t index_of(const std::string& name) const;

  friend bool operator==(const ParamLayout& a, const ParamLayout& b) { return a.entries_ == b.entries_; }

 private:
  std::vector<ParamEntry> entries_;
  std::vector<std::size_t> offsets_;
  std::size_t total_ = 0;
};

// Flat parameter vector plus its layout: the unit of aggregation, broadcast
// and checkpointing.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(ParamLayout layout, double fill = 0.0);
  ParamVector(ParamLayout layout, std::vector<double> values);

  const ParamLayout& layout() const noexcept { return layout_; }
  std::size_t size() const noexcept { return values_.size(); }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  std::span<double> slice(std::size_t entry);
  std::span<const double> slice(std::size_t entry) const;
  Tensor tensor(std::size_t entry) const;

  // FNV-1a over the little-endian bytes of every value.
  std::uint64_t checksum() const;

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  ParamLayout layout_;
  std::vector<double> values_;
};

// Puts every entry on the tape, as leaves when `trainable`, else constants.
std::vector<diff::Var> bind(diff::Tape& tape, const ParamVector& params, bool trainable);

// Gathers the gradients of bound entries back into one flat vector.
std::vector<double> gather_gradients(const diff::Gradients& grads, const std::vector<diff::Var>& bound,
                                     const ParamLayout& layout);

}  // namespace protofl::repr
