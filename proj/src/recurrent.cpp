#include "dipole/recurrent.hpp"

#include <cmath>

#include "dipole/error.hpp"
#include "dipole/ops.hpp"

namespace dipole {

GruParams GruParams::declare(ParamStore& store, const std::string& prefix, std::size_t input_dim,
                             std::size_t hidden_dim, Rng& rng) {
  GruParams g;
  g.input_dim = input_dim;
  g.hidden_dim = hidden_dim;
  const Shape in{hidden_dim, input_dim}, rec{hidden_dim, hidden_dim}, bias{hidden_dim};
  g.w_z = store.add(prefix + ".W_z", in, InitScheme::glorot_uniform, rng);
  g.w_r = store.add(prefix + ".W_r", in, InitScheme::glorot_uniform, rng);
  g.w_h = store.add(prefix + ".W_h", in, InitScheme::glorot_uniform, rng);
  g.u_z = store.add(prefix + ".U_z", rec, InitScheme::glorot_uniform, rng);
  g.u_r = store.add(prefix + ".U_r", rec, InitScheme::glorot_uniform, rng);
  g.u_h = store.add(prefix + ".U_h", rec, InitScheme::glorot_uniform, rng);
  g.b_z = store.add(prefix + ".b_z", bias, InitScheme::zeros, rng);
  g.b_r = store.add(prefix + ".b_r", bias, InitScheme::zeros, rng);
  g.b_h = store.add(prefix + ".b_h", bias, InitScheme::zeros, rng);
  return g;
}

GruParams GruParams::find(const ParamStore& store, const std::string& prefix) {
  GruParams g;
  g.w_z = store.id(prefix + ".W_z");
  g.w_r = store.id(prefix + ".W_r");
  g.w_h = store.id(prefix + ".W_h");
  g.u_z = store.id(prefix + ".U_z");
  g.u_r = store.id(prefix + ".U_r");
  g.u_h = store.id(prefix + ".U_h");
  g.b_z = store.id(prefix + ".b_z");
  g.b_r = store.id(prefix + ".b_r");
  g.b_h = store.id(prefix + ".b_h");
  const Tensor& w = store.value(g.w_z);
  g.hidden_dim = w.rows();
  g.input_dim = w.cols();
  return g;
}

GruVars GruVars::bind(Tape& tape, const ParamStore& store, const GruParams& p) {
  GruVars v;
  v.w_z = tape.param(store, p.w_z);
  v.w_r = tape.param(store, p.w_r);
  v.w_h = tape.param(store, p.w_h);
  v.u_z = tape.param(store, p.u_z);
  v.u_r = tape.param(store, p.u_r);
  v.u_h = tape.param(store, p.u_h);
  v.b_z = tape.param(store, p.b_z);
  v.b_r = tape.param(store, p.b_r);
  v.b_h = tape.param(store, p.b_h);
  v.input_dim = p.input_dim;
  v.hidden_dim = p.hidden_dim;
  return v;
}

namespace {

// out += W x, W is [rows x cols]
void matvec_add(const Tensor& w, const double* x, double* out) {
  const std::size_t rows = w.rows(), cols = w.cols();
  const double* wd = w.data().data();
  for (std::size_t i = 0; i < rows; ++i) {
    double s = 0.0;
    const double* row = wd + i * cols;
    for (std::size_t j = 0; j < cols; ++j) s += row[j] * x[j];
    out[i] += s;
  }
}

// out += W^T g, W is [rows x cols]
void matvec_t_add(const Tensor& w, const double* g, double* out) {
  const std::size_t rows = w.rows(), cols = w.cols();
  const double* wd = w.data().data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double gi = g[i];
    if (gi == 0.0) continue;
    const double* row = wd + i * cols;
    for (std::size_t j = 0; j < cols; ++j) out[j] += row[j] * gi;
  }
}

// dW += g x^T
void outer_add(Tensor& dw, const double* g, const double* x) {
  const std::size_t rows = dw.rows(), cols = dw.cols();
  double* d = dw.data().data();
  for (std::size_t i = 0; i < rows; ++i) {
    const double gi = g[i];
    if (gi == 0.0) continue;
    double* row = d + i * cols;
    for (std::size_t j = 0; j < cols; ++j) row[j] += gi * x[j];
  }
}

}  // namespace

Var gru_step(const GruVars& gru, Var input, Var h_prev) {
  const std::size_t p = gru.hidden_dim, m = gru.input_dim;
  const Tensor& v = input.value();
  const Tensor& h = h_prev.value();
  if (v.rank() != 1 || v.size() != m || h.rank() != 1 || h.size() != p) {
    throw DimensionError("gru_step: expected input [" + std::to_string(m) + "] and state [" +
                         std::to_string(p) + "], got " + shape_string(v.shape()) + " and " +
                         shape_string(h.shape()));
  }
  Tape& tape = input.tape();
  std::vector<double> z(p), r(p), n(p), rh(p);
  for (std::size_t i = 0; i < p; ++i) {
    z[i] = gru.b_z.value()[i];
    r[i] = gru.b_r.value()[i];
    n[i] = gru.b_h.value()[i];
  }
  matvec_add(gru.w_z.value(), v.data().data(), z.data());
  matvec_add(gru.u_z.value(), h.data().data(), z.data());
  matvec_add(gru.w_r.value(), v.data().data(), r.data());
  matvec_add(gru.u_r.value(), h.data().data(), r.data());
  for (std::size_t i = 0; i < p; ++i) {
    z[i] = 1.0 / (1.0 + std::exp(-z[i]));
    r[i] = 1.0 / (1.0 + std::exp(-r[i]));
    rh[i] = r[i] * h[i];
  }
  matvec_add(gru.w_h.value(), v.data().data(), n.data());
  matvec_add(gru.u_h.value(), rh.data(), n.data());
  Tensor out({p});
  for (std::size_t i = 0; i < p; ++i) {
    n[i] = std::tanh(n[i]);
    out[i] = (1.0 - z[i]) * h[i] + z[i] * n[i];
  }

  const bool needs_grad = input.requires_grad() || h_prev.requires_grad() || gru.w_z.requires_grad();
  const std::uint32_t iv = input.id(), ih = h_prev.id();
  const GruVars g = gru;
  return tape.record(
      std::move(out), needs_grad,
      [g, iv, ih, p, m, z = std::move(z), r = std::move(r), n = std::move(n), rh = std::move(rh)](
          Tape& t, const Tensor& grad) {
        const Tensor& v = t.value(iv);
        const Tensor& h = t.value(ih);
        std::vector<double> da_z(p), da_r(p), da_h(p), d_rh(p, 0.0), dh(p, 0.0);
        for (std::size_t i = 0; i < p; ++i) {
          const double dz = grad[i] * (n[i] - h[i]);
          const double dn = grad[i] * z[i];
          dh[i] = grad[i] * (1.0 - z[i]);
          da_h[i] = dn * (1.0 - n[i] * n[i]);
          da_z[i] = dz * z[i] * (1.0 - z[i]);
        }
        matvec_t_add(g.u_h.value(), da_h.data(), d_rh.data());
        for (std::size_t i = 0; i < p; ++i) {
          const double dr = d_rh[i] * h[i];
          dh[i] += d_rh[i] * r[i];
          da_r[i] = dr * r[i] * (1.0 - r[i]);
        }
        if (g.w_z.requires_grad()) {
          outer_add(t.grad_slot(g.w_z.id()), da_z.data(), v.data().data());
          outer_add(t.grad_slot(g.w_r.id()), da_r.data(), v.data().data());
          outer_add(t.grad_slot(g.w_h.id()), da_h.data(), v.data().data());
          outer_add(t.grad_slot(g.u_z.id()), da_z.data(), h.data().data());
          outer_add(t.grad_slot(g.u_r.id()), da_r.data(), h.data().data());
          outer_add(t.grad_slot(g.u_h.id()), da_h.data(), rh.data());
          Tensor& dbz = t.grad_slot(g.b_z.id());
          Tensor& dbr = t.grad_slot(g.b_r.id());
          Tensor& dbh = t.grad_slot(g.b_h.id());
          for (std::size_t i = 0; i < p; ++i) {
            dbz[i] += da_z[i];
            dbr[i] += da_r[i];
            dbh[i] += da_h[i];
          }
        }
        if (t.requires_grad(iv)) {
          Tensor& dv = t.grad_slot(iv);
          matvec_t_add(g.w_z.value(), da_z.data(), dv.data().data());
          matvec_t_add(g.w_r.value(), da_r.data(), dv.data().data());
          matvec_t_add(g.w_h.value(), da_h.data(), dv.data().data());
        }
        if (t.requires_grad(ih)) {
          matvec_t_add(g.u_z.value(), da_z.data(), dh.data());
          matvec_t_add(g.u_r.value(), da_r.data(), dh.data());
          Tensor& dhp = t.grad_slot(ih);
          for (std::size_t i = 0; i < p; ++i) dhp[i] += dh[i];
        }
        (void)m;
      });
}

Tensor HiddenSequence::to_matrix() const {
  const std::size_t w = width();
  Tensor out({states.size(), w});
  for (std::size_t t = 0; t < states.size(); ++t) {
    const Tensor& s = states[t].value();
    for (std::size_t j = 0; j < w; ++j) out.at(t, j) = s[j];
  }
  return out;
}

namespace {
Var zero_state(Tape& tape, std::size_t p) { return tape.constant(Tensor({p})); }
}  // namespace

HiddenSequence run_forward(const GruVars& gru, std::span<const Var> inputs) {
  HiddenSequence seq;
  seq.direction = Direction::forward;
  if (inputs.empty()) return seq;
  Var h = zero_state(inputs[0].tape(), gru.hidden_dim);
  for (const Var& x : inputs) {
    h = gru_step(gru, x, h);
    seq.states.push_back(h);
  }
  return seq;
}

HiddenSequence run_backward(const GruVars& gru, std::span<const Var> inputs) {
  HiddenSequence seq;
  seq.direction = Direction::backward;
  if (inputs.empty()) return seq;
  seq.states.resize(inputs.size());
  Var h = zero_state(inputs[0].tape(), gru.hidden_dim);
  for (std::size_t t = inputs.size(); t-- > 0;) {
    h = gru_step(gru, inputs[t], h);
    seq.states[t] = h;
  }
  return seq;
}

HiddenSequence run_bidirectional(const GruVars& forward, const GruVars& backward,
                                 std::span<const Var> inputs, BrnnMode mode) {
  std::span<const Var> window = inputs;
  if (mode.kind == BrnnMode::Kind::prefix) {
    if (mode.prefix_length < 1 || mode.prefix_length > inputs.size()) {
      throw ContractError("run_bidirectional: prefix length " + std::to_string(mode.prefix_length) +
                          " outside [1, " + std::to_string(inputs.size()) + "]");
    }
    window = inputs.first(mode.prefix_length);
  }
  const HiddenSequence fwd = run_forward(forward, window);
  const HiddenSequence bwd = run_backward(backward, window);
  HiddenSequence seq;
  seq.direction = Direction::bidirectional;
  for (std::size_t t = 0; t < window.size(); ++t) seq.states.push_back(concat(fwd.states[t], bwd.states[t]));
  return seq;
}

}  // namespace dipole
