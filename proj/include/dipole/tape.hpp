#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <limits>

#include "dipole/params.hpp"
#include "dipole/tensor.hpp"

namespace dipole {

class Tape;

// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape& tape() const { return *tape_; }
  std::uint32_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }
  const Tensor& value() const;
  bool requires_grad() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = 0;
};

// Reverse-mode recording. Nodes are appended in evaluation order, so the
// node list is already topologically sorted; backward walks it in reverse.
// A tape is confined to one thread.
class Tape {
 public:
  // Receives the gradient of the node's output and pushes contributions to
  // its inputs via accumulate().
  using BackwardFn = std::function<void(Tape&, const Tensor& grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Leaf bound to a stored parameter. The store must outlive the tape and
  // must not be mutated while the tape is alive.
  Var param(const ParamStore& store, ParamId id);
  Var record(Tensor value, bool requires_grad, BackwardFn backward);

  const Tensor& value(std::uint32_t id) const;
  bool requires_grad(std::uint32_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Adds delta into the gradient of node `id`, allocating it on first use.
  void accumulate(std::uint32_t id, const Tensor& delta);
  // Mutable gradient slot for node `id`, zero-initialized on first use.
  Tensor& grad_slot(std::uint32_t id);

  // Propagates d(loss)/d(node) through the tape and adds parameter
  // gradients into `into` (+=). `loss` must be a scalar on this tape.
  void backward(Var loss, Gradients& into);

  // Kink bookkeeping for finite-difference checks: the smallest |x| seen
  // at a non-differentiable point (relu at 0, clamp bounds).
  void note_kink(double distance);
  double min_kink_distance() const { return min_kink_; }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    std::int64_t param = -1;
    bool requires_grad = false;
    BackwardFn backward;
    Tensor grad;
    bool has_grad = false;
  };
  std::deque<Node> nodes_;
  double min_kink_ = std::numeric_limits<double>::infinity();
};

}  // namespace dipole
