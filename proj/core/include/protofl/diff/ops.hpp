#pragma once

#include <cstddef>

#include "protofl/diff/tape.hpp"

// Differentiable ops over Var. Every op validates shapes and throws
// DimensionError on mismatch. Batches are rank-2 [rows, features].
namespace protofl::diff {

Var matmul(const Var& a, const Var& b);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double offset);

// [rows, n] op [n] broadcast over rows.
Var add_row(const Var& a, const Var& row);
Var mul_row(const Var& a, const Var& row);

Var relu(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var square(const Var& a);

Var sum(const Var& a);
Var mean(const Var& a);
// [rows, n] -> [rows]
Var row_sum(const Var& a);

// Normalizes each row's `groups` contiguous channel groups to zero mean and
// unit variance (biased variance, eps inside the square root). No affine.
Var group_norm(const Var& a, std::size_t groups, double eps = 1e-5);

// Row-wise log-softmax of a [rows, n] tensor.
Var log_softmax_rows(const Var& a);

// Row-wise cosine similarity of two [rows, n] tensors -> [rows]. Norms are
// clamped below at `eps`.
Var cosine_rows(const Var& a, const Var& b, double eps = 1e-12);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

// Non-differentiable helper: plain product of two rank-2 tensors.
Tensor matmul(const Tensor& a, const Tensor& b);

}  // namespace protofl::diff
