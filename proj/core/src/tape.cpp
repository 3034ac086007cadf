#include "protofl/diff/tape.hpp"

#include "protofl/errors.hpp"

namespace protofl::diff {

const Tensor& Var::value() const {
  if (!tape_) throw ContractError("use of an unbound Var");
  return tape_->value(id_);
}

Var Tape::leaf(Tensor value) {
  Node node;
  node.value = std::move(value);
  node.needs_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
  if (!value.all_finite()) throw NumericError("non-finite value produced by op at tape position " +
                                              std::to_string(nodes_.size()));
  Node node;
  node.value = std::move(value);
  for (auto p : parents) node.needs_grad = node.needs_grad || nodes_.at(p).needs_grad;
  node.parents = std::move(parents);
  if (node.needs_grad) node.fn = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Tensor& Tape::accumulate_into(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.grad_ready) {
    node.grad = Tensor(node.value.shape(), 0.0);
    node.grad_ready = true;
  }
  return node.grad;
}

Gradients Tape::backward(const Var& output) {
  if (output.tape() != this) throw ContractError("backward() on a Var recorded by another tape");
  if (nodes_[output.id()].value.size() != 1) {
    throw ContractError("backward() needs a scalar output, got shape " +
                        shape_string(nodes_[output.id()].value.shape()));
  }
  if (backward_done_) throw ContractError("backward() already ran on this tape");
  backward_done_ = true;

  accumulate_into(output.id())[0] = 1.0;
  for (std::size_t i = output.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.needs_grad || !node.grad_ready || !node.fn) continue;
    node.fn(*this, i);
  }

  std::vector<Tensor> grads;
  grads.reserve(nodes_.size());
  for (auto& node : nodes_) {
    grads.push_back(node.grad_ready ? std::move(node.grad) : Tensor(node.value.shape(), 0.0));
  }
  return Gradients(std::move(grads));
}

}  // namespace protofl::diff
