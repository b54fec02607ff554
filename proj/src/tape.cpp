#include "dipole/tape.hpp"

#include <cassert>
#include <cmath>

#include "dipole/error.hpp"

namespace dipole {

const Tensor& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::param(const ParamStore& store, ParamId id) {
  Node node;
  node.external = &store.value(id);
  node.param = static_cast<std::int64_t>(id);
  node.requires_grad = true;
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn backward) {
  assert(value.all_finite() && "non-finite value recorded on tape");
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  if (requires_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
}

const Tensor& Tape::value(std::uint32_t id) const {
  const Node& node = nodes_[id];
  return node.external ? *node.external : node.value;
}

Tensor& Tape::grad_slot(std::uint32_t id) {
  Node& node = nodes_[id];
  if (!node.has_grad) {
    node.grad = Tensor(value(id).shape());
    node.has_grad = true;
  }
  return node.grad;
}

void Tape::accumulate(std::uint32_t id, const Tensor& delta) {
  if (!nodes_[id].requires_grad) return;
  grad_slot(id).add_scaled(delta);
}

void Tape::backward(Var loss, Gradients& into) {
  if (&loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_string(loss.value().shape()));
  }
  for (Node& node : nodes_) node.has_grad = false;
  grad_slot(loss.id()).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad || !node.requires_grad) continue;
    if (node.backward) {
      node.backward(*this, node.grad);
    } else if (node.param >= 0) {
      into[static_cast<ParamId>(node.param)].add_scaled(node.grad);
    }
  }
}

void Tape::note_kink(double distance) {
  distance = std::abs(distance);
  if (distance < min_kink_) min_kink_ = distance;
}

}  // namespace dipole
