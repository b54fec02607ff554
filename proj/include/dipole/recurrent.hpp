#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "dipole/params.hpp"
#include "dipole/tape.hpp"

namespace dipole {

// Parameter ids of one GRU: input weights W_* are [p x m], recurrent
// weights U_* are [p x p], biases b_* are [p].
struct GruParams {
  ParamId w_z, w_r, w_h;
  ParamId u_z, u_r, u_h;
  ParamId b_z, b_r, b_h;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;

  // Registers "<prefix>.W_z" ... "<prefix>.b_h" with Glorot weights and zero biases.
  static GruParams declare(ParamStore& store, const std::string& prefix, std::size_t input_dim,
                           std::size_t hidden_dim, Rng& rng);
  // Looks up previously registered parameters by name.
  static GruParams find(const ParamStore& store, const std::string& prefix);
};

// GRU parameters bound as leaves of one tape.
struct GruVars {
  Var w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;

  static GruVars bind(Tape& tape, const ParamStore& store, const GruParams& params);
};

// z = sigmoid(W_z v + U_z h + b_z)
// r = sigmoid(W_r v + U_r h + b_r)
// n = tanh(W_h v + U_h (r * h) + b_h)
// h' = (1 - z) * h + z * n
// Recorded as a single tape node with an analytic backward.
Var gru_step(const GruVars& gru, Var input, Var h_prev);

enum class Direction { forward, backward, bidirectional };

struct HiddenSequence {
  std::vector<Var> states;  // states[t] for input position t (0-based)
  Direction direction = Direction::forward;

  std::size_t length() const { return states.size(); }
  std::size_t width() const { return states.empty() ? 0 : states.front().value().size(); }
  // States stacked as a [T x width] tensor.
  Tensor to_matrix() const;
};

// Reads inputs[0..T) left to right from a zero initial state.
HiddenSequence run_forward(const GruVars& gru, std::span<const Var> inputs);
// Reads inputs right to left from its own zero state; states[t] is indexed
// by original position.
HiddenSequence run_backward(const GruVars& gru, std::span<const Var> inputs);

// Causality mode of the bidirectional encoder.
//   full:      both directions read every input.
//   prefix(t): both directions read only inputs[0..t), so no state depends
//              on later inputs.
struct BrnnMode {
  enum class Kind { full, prefix } kind = Kind::full;
  std::size_t prefix_length = 0;

  static BrnnMode full() { return {Kind::full, 0}; }
  static BrnnMode prefix(std::size_t t) { return {Kind::prefix, t}; }
};

// states[t] = [forward_t; backward_t], width 2p. In prefix(t) mode the
// result has t states.
HiddenSequence run_bidirectional(const GruVars& forward, const GruVars& backward,
                                 std::span<const Var> inputs, BrnnMode mode);

}  // namespace dipole
