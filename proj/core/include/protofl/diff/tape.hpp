#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "protofl/diff/tensor.hpp"

namespace protofl::diff {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// owning tape is alive.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Tape* tape() const noexcept { return tape_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Gradients {
 public:
  explicit Gradients(std::vector<Tensor> by_node) : by_node_(std::move(by_node)) {}

  // Gradient of the backward() output with respect to `v`. Zero tensor when
  // `v` does not influence the output.
  const Tensor& operator[](const Var& v) const { return by_node_.at(v.id()); }

 private:
  std::vector<Tensor> by_node_;
};

// Reverse-mode recorder. Each op appends one node holding its forward value
// and a closure that scatters the node's adjoint into its parents. backward()
// replays closures in exact reverse order of recording.
//
// Single-threaded: one tape per training task.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Differentiable input.
  Var leaf(Tensor value);
  // Non-differentiable input; its adjoint is never accumulated.
  Var constant(Tensor value);

  // Used by op implementations. `needs_grad` is true when any parent does.
  Var record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  // Adjoint accessors for op closures.
  const Tensor& adjoint(std::size_t id) const { return nodes_[id].grad; }
  Tensor& accumulate_into(std::size_t id);

  Gradients backward(const Var& output);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    bool grad_ready = false;
    std::vector<std::size_t> parents;
    BackwardFn fn;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace protofl::diff
