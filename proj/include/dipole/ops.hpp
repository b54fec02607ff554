#pragma once

#include <cstddef>
#include <span>

#include "dipole/rng.hpp"
#include "dipole/tape.hpp"

// Differentiable tensor ops. Every op records one node on the tape of its
// inputs; all inputs must live on the same tape. Shape mismatches throw
// DimensionError naming the op and the offending shapes.
namespace dipole {

// [m x n] . [n] -> [m]  or  [m x n] . [n x k] -> [m x k]
Var matmul(Var a, Var b);
Var transpose(Var a);
// Inner product of two equal-length vectors, as a length-1 tensor.
Var dot(Var a, Var b);

// Elementwise; `b` may also be a length-1 tensor broadcast over `a`.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// scale * a + shift
Var affine(Var a, double scale, double shift);

// Rank-1 parts join along axis 0; rank-2 parts join rows (axis 0) or
// columns (axis 1).
Var concat(std::span<const Var> parts, std::size_t axis = 0);
Var concat(Var a, Var b);
// Equal-length vectors -> matrix with one row per vector.
Var stack_rows(std::span<const Var> rows);

Var relu(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var log(Var a);
// Gradient is zero outside [lo, hi].
Var clamp(Var a, double lo, double hi);

// Max-subtracted softmax. Rank 1: over the vector. Rank 2: axis 1
// normalizes each row, axis 0 each column.
Var softmax(Var a, std::size_t axis = 0);

// Inverted dropout: survivors are scaled by 1 / (1 - rate). Identity when
// `train` is false or rate is 0.
Var dropout(Var a, double rate, bool train, Rng& rng);

Var reduce_sum(Var a);
Var reduce_mean(Var a);

}  // namespace dipole
