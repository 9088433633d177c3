#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "dcelanm/tape.hpp"
#include "dcelanm/tensor.hpp"

namespace dcelanm {

// Differentiable tensor ops. Every op computes its output eagerly and, while
// the active tape is recording and an input is tracked, appends a backward
// rule. Binary ops broadcast `b` into `a` by the trailing-axes rule: shapes
// are right-aligned and each aligned dim of b must equal a's or be 1.

template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> pow_elem(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);
template <typename T> Tensor<T> pow_scalar(const Tensor<T>& a, T s);
/// s / a, elementwise.
template <typename T> Tensor<T> rdiv_scalar(T s, const Tensor<T>& a);

template <typename T> Tensor<T> neg(const Tensor<T>& a);
template <typename T> Tensor<T> exp_elem(const Tensor<T>& a);
template <typename T> Tensor<T> log_elem(const Tensor<T>& a);
template <typename T> Tensor<T> sqrt_elem(const Tensor<T>& a);
template <typename T> Tensor<T> sigmoid(const Tensor<T>& a);
/// x * sigmoid(x)
template <typename T> Tensor<T> silu(const Tensor<T>& a);
/// Exact gaussian GELU: 0.5 x (1 + erf(x / sqrt(2)))
template <typename T> Tensor<T> gelu(const Tensor<T>& a);

/// Batched matrix product a[..,m,k] @ b[..,k,n]. Batch dims broadcast by the
/// trailing-axes rule (either side may be 1); a rank-2 operand is shared
/// across the other side's batch.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

/// Reductions. Empty `axes` reduces everything (result shape {1}).
template <typename T> Tensor<T> sum(const Tensor<T>& x, std::vector<int64_t> axes = {}, bool keepdim = false);
template <typename T> Tensor<T> mean(const Tensor<T>& x, std::vector<int64_t> axes = {}, bool keepdim = false);
/// Max; gradient routes to the first-occurrence argmax of each window.
template <typename T> Tensor<T> max_reduce(const Tensor<T>& x, std::vector<int64_t> axes = {}, bool keepdim = false);

template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape new_shape);
/// General axis permutation; perm[i] = source axis of output axis i.
template <typename T> Tensor<T> transpose(const Tensor<T>& x, std::vector<int64_t> perm);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, int64_t axis);
template <typename T> Tensor<T> slice(const Tensor<T>& x, int64_t axis, int64_t start, int64_t len);
/// Zero padding, one (lo, hi) pair per axis.
template <typename T> Tensor<T> pad(const Tensor<T>& x, const std::vector<std::pair<int64_t, int64_t>>& lohi);
/// Exact inverse of pad with the same spec.
template <typename T> Tensor<T> crop(const Tensor<T>& x, const std::vector<std::pair<int64_t, int64_t>>& lohi);

/// Gather rows along axis 1 of x[B,N,D] with per-sample indices
/// (idx is row-major [B,m]). Backward scatter-adds.
template <typename T> Tensor<T> take_tokens(const Tensor<T>& x, const std::vector<int64_t>& idx, int64_t m);

/// Numerically stable softmax over the last axis.
template <typename T> Tensor<T> softmax_lastdim(const Tensor<T>& x);

// operator sugar
template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return divide(a, b); }
template <typename T> Tensor<T> operator+(const Tensor<T>& a, T s) { return add_scalar(a, s); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, T s) { return add_scalar(a, -s); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, T s) { return mul_scalar(a, s); }
template <typename T> Tensor<T> operator*(T s, const Tensor<T>& a) { return mul_scalar(a, s); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, T s) { return mul_scalar(a, T(1) / s); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

}  // namespace dcelanm
