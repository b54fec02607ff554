#include "dipole/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dipole/error.hpp"

namespace dipole {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.shape()) +
                       " and " + shape_string(b.shape()));
}

Tape& same_tape(Var a, Var b, const char* op) {
  if (&a.tape() != &b.tape()) throw ContractError(std::string(op) + ": inputs on different tapes");
  return a.tape();
}

// C[m x k] (+)= A[m x n] * B[n x k], all row-major.
void gemm(const double* a, const double* b, double* c, std::size_t m, std::size_t n,
          std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * k;
    const double* arow = a + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double aij = arow[j];
      if (aij == 0.0) continue;
      const double* brow = b + j * k;
      for (std::size_t l = 0; l < k; ++l) crow[l] += aij * brow[l];
    }
  }
}

template <typename Fn>
Var unary(Var a, Tensor out, Fn local_grad) {
  Tape& tape = a.tape();
  const std::uint32_t ia = a.id();
  return tape.record(std::move(out), a.requires_grad(),
                     [ia, local_grad](Tape& t, const Tensor& g) {
                       const Tensor& x = t.value(ia);
                       Tensor d(x.shape());
                       for (std::size_t i = 0; i < d.size(); ++i) d[i] = g[i] * local_grad(x[i]);
                       t.accumulate(ia, d);
                     });
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& tape = same_tape(a, b, "matmul");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || av.cols() != bv.rows()) shape_error("matmul", av, bv);
  const std::size_t m = av.rows(), n = av.cols(), k = bv.cols();
  const bool vec = bv.rank() == 1;
  const std::uint32_t ia = a.id(), ib = b.id();
  const bool ga = a.requires_grad(), gb = b.requires_grad();

  // Matrix times a mostly-zero vector (multi-hot visits): only the nonzero
  // columns contribute, and skipping exact zeros leaves every sum unchanged.
  if (vec) {
    std::vector<std::uint32_t> nz;
    for (std::size_t j = 0; j < n; ++j) {
      if (bv[j] != 0.0) nz.push_back(static_cast<std::uint32_t>(j));
    }
    if (nz.size() * 2 < n) {
      Tensor out({m});
      for (std::size_t i = 0; i < m; ++i) {
        double s = 0.0;
        for (std::uint32_t j : nz) s += av[i * n + j] * bv[j];
        out[i] = s;
      }
      return tape.record(std::move(out), ga || gb, [ia, ib, ga, gb, m, n, nz = std::move(nz)](Tape& t, const Tensor& g) {
        const Tensor& A = t.value(ia);
        const Tensor& B = t.value(ib);
        if (ga) {
          Tensor& dA = t.grad_slot(ia);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::uint32_t j : nz) dA[i * n + j] += g[i] * B[j];
          }
        }
        if (gb) {
          Tensor& dB = t.grad_slot(ib);
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < n; ++j) dB[j] += A[i * n + j] * g[i];
          }
        }
      });
    }
  }

  Tensor out(vec ? Shape{m} : Shape{m, k});
  gemm(av.data().data(), bv.data().data(), out.data().data(), m, n, k);
  return tape.record(std::move(out), ga || gb, [ia, ib, ga, gb, m, n, k](Tape& t, const Tensor& g) {
    const Tensor& A = t.value(ia);
    const Tensor& B = t.value(ib);
    if (ga) {
      // dA[i][j] = sum_l g[i][l] * B[j][l]
      Tensor& dA = t.grad_slot(ia);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          for (std::size_t l = 0; l < k; ++l) s += g[i * k + l] * B[j * k + l];
          dA[i * n + j] += s;
        }
      }
    }
    if (gb) {
      // dB[j][l] = sum_i A[i][j] * g[i][l]
      Tensor& dB = t.grad_slot(ib);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const double aij = A[i * n + j];
          for (std::size_t l = 0; l < k; ++l) dB[j * k + l] += aij * g[i * k + l];
        }
      }
    }
  });
}

Var transpose(Var a) {
  const Tensor& av = a.value();
  if (av.rank() != 2) throw DimensionError("transpose: expected matrix, got " + shape_string(av.shape()));
  const std::size_t r = av.rows(), c = av.cols();
  Tensor out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out.at(j, i) = av.at(i, j);
  const std::uint32_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(), [ia, r, c](Tape& t, const Tensor& g) {
    Tensor& d = t.grad_slot(ia);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) d[i * c + j] += g[j * r + i];
  });
}

Var dot(Var a, Var b) {
  Tape& tape = same_tape(a, b, "dot");
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 1 || av.shape() != bv.shape()) shape_error("dot", av, bv);
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * bv[i];
  const std::uint32_t ia = a.id(), ib = b.id();
  return tape.record(Tensor::scalar(s), a.requires_grad() || b.requires_grad(),
                     [ia, ib](Tape& t, const Tensor& g) {
                       if (t.requires_grad(ia)) {
                         Tensor& d = t.grad_slot(ia);
                         d.add_scaled(t.value(ib), g[0]);
                       }
                       if (t.requires_grad(ib)) {
                         Tensor& d = t.grad_slot(ib);
                         d.add_scaled(t.value(ia), g[0]);
                       }
                     });
}

namespace {

Var elementwise_binary(Var a, Var b, const char* op, int kind) {
  Tape& tape = same_tape(a, b, op);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const bool broadcast = av.shape() != bv.shape();
  if (broadcast && (bv.size() != 1 || kind == 2)) shape_error(op, av, bv);
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double y = bv[broadcast ? 0 : i];
    out[i] = kind == 0 ? av[i] + y : kind == 1 ? av[i] - y : av[i] * y;
  }
  const std::uint32_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [ia, ib, kind, broadcast](Tape& t, const Tensor& g) {
                       if (t.requires_grad(ia)) {
                         Tensor& d = t.grad_slot(ia);
                         if (kind == 2) {
                           const Tensor& y = t.value(ib);
                           for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i];
                         } else {
                           d.add_scaled(g);
                         }
                       }
                       if (t.requires_grad(ib)) {
                         Tensor& d = t.grad_slot(ib);
                         const double sign = kind == 1 ? -1.0 : 1.0;
                         if (kind == 2) {
                           const Tensor& x = t.value(ia);
                           for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * x[i];
                         } else if (broadcast) {
                           double s = 0.0;
                           for (std::size_t i = 0; i < g.size(); ++i) s += g[i];
                           d[0] += sign * s;
                         } else {
                           d.add_scaled(g, sign);
                         }
                       }
                     });
}

}  // namespace

Var add(Var a, Var b) { return elementwise_binary(a, b, "add", 0); }
Var sub(Var a, Var b) { return elementwise_binary(a, b, "sub", 1); }
Var mul(Var a, Var b) { return elementwise_binary(a, b, "mul", 2); }

Var affine(Var a, double scale, double shift) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * av[i] + shift;
  return unary(a, std::move(out), [scale](double) { return scale; });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Tape& tape = parts[0].tape();
  const Tensor& first = parts[0].value();
  const std::size_t rank = first.rank();
  if (axis >= rank) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(first.shape()));
  }
  bool needs_grad = false;
  std::size_t extent = 0;
  for (const Var& p : parts) {
    same_tape(parts[0], p, "concat");
    const Tensor& pv = p.value();
    if (pv.rank() != rank || (rank == 2 && axis == 0 && pv.cols() != first.cols()) ||
        (rank == 2 && axis == 1 && pv.rows() != first.rows())) {
      shape_error("concat", first, pv);
    }
    extent += pv.shape()[axis];
    needs_grad = needs_grad || p.requires_grad();
  }
  Shape shape = first.shape();
  shape[axis] = extent;
  Tensor out(shape);
  std::vector<std::uint32_t> ids;
  ids.reserve(parts.size());
  if (rank == 1 || axis == 0) {
    // Row-major: parts are contiguous blocks.
    std::size_t offset = 0;
    for (const Var& p : parts) {
      const Tensor& pv = p.value();
      std::copy(pv.data().begin(), pv.data().end(), out.data().begin() + offset);
      offset += pv.size();
      ids.push_back(p.id());
    }
    return tape.record(std::move(out), needs_grad, [ids](Tape& t, const Tensor& g) {
      std::size_t offset = 0;
      for (std::uint32_t id : ids) {
        const std::size_t n = t.value(id).size();
        if (t.requires_grad(id)) {
          Tensor& d = t.grad_slot(id);
          for (std::size_t i = 0; i < n; ++i) d[i] += g[offset + i];
        }
        offset += n;
      }
    });
  }
  const std::size_t rows = first.rows();
  std::size_t col = 0;
  for (const Var& p : parts) {
    const Tensor& pv = p.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) out.at(r, col + c) = pv.at(r, c);
    col += pv.cols();
    ids.push_back(p.id());
  }
  return tape.record(std::move(out), needs_grad, [ids, rows, extent](Tape& t, const Tensor& g) {
    std::size_t col = 0;
    for (std::uint32_t id : ids) {
      const std::size_t c = t.value(id).cols();
      if (t.requires_grad(id)) {
        Tensor& d = t.grad_slot(id);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t j = 0; j < c; ++j) d[r * c + j] += g[r * extent + col + j];
      }
      col += c;
    }
  });
}

Var concat(Var a, Var b) {
  const Var parts[] = {a, b};
  return concat(parts, 0);
}

Var stack_rows(std::span<const Var> rows) {
  if (rows.empty()) throw DimensionError("stack_rows: no inputs");
  const Tensor& first = rows[0].value();
  if (first.rank() != 1) throw DimensionError("stack_rows: expected vectors, got " + shape_string(first.shape()));
  Var joined = concat(rows, 0);
  if (joined.value().size() != rows.size() * first.size()) {
    throw DimensionError("stack_rows: rows of unequal length");
  }
  // Reinterpret the joined vector as a matrix; gradients flow through unchanged.
  Tensor out({rows.size(), first.size()}, joined.value().values());
  const std::uint32_t ij = joined.id();
  return joined.tape().record(std::move(out), joined.requires_grad(), [ij](Tape& t, const Tensor& g) {
    Tensor& d = t.grad_slot(ij);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i];
  });
}

Var relu(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  Tape& tape = a.tape();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = av[i] > 0.0 ? av[i] : 0.0;
    tape.note_kink(av[i]);
  }
  // Subgradient 0 at the kink.
  return unary(a, std::move(out), [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(av[i]);
  const std::uint32_t ia = a.id();
  Tape& tape = a.tape();
  const std::uint32_t self = static_cast<std::uint32_t>(tape.size());
  return tape.record(std::move(out), a.requires_grad(), [ia, self](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor& d = t.grad_slot(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * (1.0 - y[i] * y[i]);
  });
}

Var sigmoid(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-av[i]));
  const std::uint32_t ia = a.id();
  Tape& tape = a.tape();
  const std::uint32_t self = static_cast<std::uint32_t>(tape.size());
  return tape.record(std::move(out), a.requires_grad(), [ia, self](Tape& t, const Tensor& g) {
    const Tensor& y = t.value(self);
    Tensor& d = t.grad_slot(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var log(Var a) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(av[i] > 0.0)) throw ContractError("log: non-positive input " + std::to_string(av[i]));
    out[i] = std::log(av[i]);
  }
  return unary(a, std::move(out), [](double x) { return 1.0 / x; });
}

Var clamp(Var a, double lo, double hi) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  Tape& tape = a.tape();
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(av[i], lo, hi);
    tape.note_kink(std::min(std::abs(av[i] - lo), std::abs(av[i] - hi)));
  }
  return unary(a, std::move(out), [lo, hi](double x) { return x >= lo && x <= hi ? 1.0 : 0.0; });
}

Var softmax(Var a, std::size_t axis) {
  const Tensor& av = a.value();
  if (axis >= av.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(av.shape()));
  }
  // Slices along `axis`: `count` slices of `len` elements spaced by `stride`.
  const std::size_t len = av.shape()[axis];
  const std::size_t stride = (av.rank() == 2 && axis == 0) ? av.cols() : 1;
  const std::size_t count = av.size() / len;
  auto base = [&](std::size_t s) { return (av.rank() == 2 && axis == 0) ? s : s * len; };
  Tensor out(av.shape());
  for (std::size_t s = 0; s < count; ++s) {
    const std::size_t b = base(s);
    double mx = av[b];
    for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, av[b + i * stride]);
    double z = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double e = std::exp(av[b + i * stride] - mx);
      out[b + i * stride] = e;
      z += e;
    }
    for (std::size_t i = 0; i < len; ++i) out[b + i * stride] /= z;
  }
  const std::uint32_t ia = a.id();
  Tape& tape = a.tape();
  const std::uint32_t self = static_cast<std::uint32_t>(tape.size());
  const bool col_major = av.rank() == 2 && axis == 0;
  return tape.record(std::move(out), a.requires_grad(),
                     [ia, self, len, stride, count, col_major](Tape& t, const Tensor& g) {
                       const Tensor& y = t.value(self);
                       Tensor& d = t.grad_slot(ia);
                       for (std::size_t s = 0; s < count; ++s) {
                         const std::size_t b = col_major ? s : s * len;
                         double gy = 0.0;
                         for (std::size_t i = 0; i < len; ++i) gy += g[b + i * stride] * y[b + i * stride];
                         for (std::size_t i = 0; i < len; ++i) {
                           const std::size_t k = b + i * stride;
                           d[k] += y[k] * (g[k] - gy);
                         }
                       }
                     });
}

Var dropout(Var a, double rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout: rate must be in [0, 1)");
  if (!train || rate == 0.0) return a;
  const Tensor& av = a.value();
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(av.size());
  Tensor out(av.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    mask[i] = rng.bernoulli(rate) ? 0.0 : keep_scale;
    out[i] = av[i] * mask[i];
  }
  const std::uint32_t ia = a.id();
  return a.tape().record(std::move(out), a.requires_grad(),
                         [ia, mask = std::move(mask)](Tape& t, const Tensor& g) {
                           Tensor& d = t.grad_slot(ia);
                           for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[i] * mask[i];
                         });
}

Var reduce_sum(Var a) {
  const Tensor& av = a.value();
  double s = 0.0;
  for (double v : av.data()) s += v;
  const std::uint32_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), a.requires_grad(), [ia](Tape& t, const Tensor& g) {
    Tensor& d = t.grad_slot(ia);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g[0];
  });
}

Var reduce_mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  return affine(reduce_sum(a), 1.0 / n, 0.0);
}

}  // namespace dipole
