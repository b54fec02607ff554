#include "dipole/attention.hpp"

#include <vector>

#include "dipole/error.hpp"
#include "dipole/ops.hpp"

namespace dipole {

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::location: return "location";
    case AttentionKind::general: return "general";
    case AttentionKind::concat: return "concat";
  }
  return "?";
}

AttentionParams AttentionParams::declare(ParamStore& store, AttentionKind kind, std::size_t width,
                                         std::size_t latent_dim, Rng& rng) {
  AttentionParams a;
  a.kind = kind;
  switch (kind) {
    case AttentionKind::location:
      a.weight = store.add("attn.W_alpha", {width}, InitScheme::glorot_uniform, rng);
      a.bias = store.add("attn.b_alpha", {1}, InitScheme::zeros, rng);
      break;
    case AttentionKind::general:
      a.weight = store.add("attn.W_alpha", {width, width}, InitScheme::glorot_uniform, rng);
      break;
    case AttentionKind::concat:
      if (latent_dim == 0) throw ConfigError("concat attention needs a positive latent dimension");
      a.weight = store.add("attn.W_alpha", {latent_dim, 2 * width}, InitScheme::glorot_uniform, rng);
      a.v = store.add("attn.v_alpha", {latent_dim}, InitScheme::glorot_uniform, rng);
      break;
  }
  return a;
}

AttentionParams AttentionParams::find(const ParamStore& store, AttentionKind kind) {
  AttentionParams a;
  a.kind = kind;
  a.weight = store.id("attn.W_alpha");
  if (kind == AttentionKind::location) a.bias = store.id("attn.b_alpha");
  if (kind == AttentionKind::concat) a.v = store.id("attn.v_alpha");
  return a;
}

AttentionVars AttentionVars::bind(Tape& tape, const ParamStore& store, const AttentionParams& p) {
  AttentionVars a;
  a.kind = p.kind;
  a.weight = tape.param(store, p.weight);
  if (p.kind == AttentionKind::location) a.bias = tape.param(store, p.bias);
  if (p.kind == AttentionKind::concat) a.v = tape.param(store, p.v);
  return a;
}

Var score_location(const AttentionVars& attn, Var h_i) {
  return add(dot(attn.weight, h_i), attn.bias);
}

Var score_general(const AttentionVars& attn, Var h_t, Var h_i) {
  return dot(h_t, matmul(attn.weight, h_i));
}

Var score_concat(const AttentionVars& attn, Var h_t, Var h_i) {
  return dot(attn.v, tanh(matmul(attn.weight, concat(h_t, h_i))));
}

AttentionOutput attend(const AttentionVars& attn, std::span<const Var> past, Var query) {
  if (past.empty()) throw ContractError("attend: no past states (t < 2)");
  const Var states = stack_rows(past);  // [(t-1) x w]
  Var scores;
  switch (attn.kind) {
    case AttentionKind::location:
      scores = add(matmul(states, attn.weight), attn.bias);
      break;
    case AttentionKind::general:
      // h_t^T W h_i for every i at once: H (W^T h_t)
      scores = matmul(states, matmul(transpose(attn.weight), query));
      break;
    case AttentionKind::concat: {
      std::vector<Var> each;
      each.reserve(past.size());
      for (const Var& h_i : past) each.push_back(score_concat(attn, query, h_i));
      scores = concat(each, 0);
      break;
    }
  }
  const Var weights = softmax(scores);
  return {weights, matmul(transpose(states), weights)};
}

Var attentional_state(Var w_c, Var context, Var h_t) {
  return tanh(matmul(w_c, concat(context, h_t)));
}

}  // namespace dipole
