#pragma once

#include <cstddef>
#include <span>
#include <string>

#include "dipole/params.hpp"
#include "dipole/tape.hpp"

namespace dipole {

enum class AttentionKind { location, general, concat };

std::string to_string(AttentionKind kind);

// Scoring parameters over encoder states of width w:
//   location: weight [w], bias [1]
//   general:  weight [w x w]
//   concat:   weight [q x 2w], v [q]
struct AttentionParams {
  AttentionKind kind = AttentionKind::location;
  ParamId weight = 0;
  ParamId bias = 0;  // location only
  ParamId v = 0;     // concat only

  static AttentionParams declare(ParamStore& store, AttentionKind kind, std::size_t width,
                                 std::size_t latent_dim, Rng& rng);
  static AttentionParams find(const ParamStore& store, AttentionKind kind);
};

struct AttentionVars {
  AttentionKind kind = AttentionKind::location;
  Var weight, bias, v;

  static AttentionVars bind(Tape& tape, const ParamStore& store, const AttentionParams& params);
};

// W^T h_i + b
Var score_location(const AttentionVars& attn, Var h_i);
// h_t^T W h_i
Var score_general(const AttentionVars& attn, Var h_t, Var h_i);
// v^T tanh(W [h_t; h_i])
Var score_concat(const AttentionVars& attn, Var h_t, Var h_i);

struct AttentionOutput {
  Var weights;  // [t-1], softmax over the past states
  Var context;  // [w], sum_i weights[i] * past[i]
};

// Attends over the past states h_1..h_{t-1} (never the query itself).
// Throws ContractError when `past` is empty.
AttentionOutput attend(const AttentionVars& attn, std::span<const Var> past, Var query);

// tanh(W_c [context; h_t]); W_c is [r x 2w].
Var attentional_state(Var w_c, Var context, Var h_t);

}  // namespace dipole
