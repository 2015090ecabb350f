#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cormult/tensor.hpp"

// Differentiable primitives. Every function records itself on the active
// tape when one of its inputs is tracked there. Binary elementwise ops
// broadcast right-aligned: trailing extents must match or be 1.
namespace cormult::ops {

Shape broadcast_shape(const Shape& a, const Shape& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, double s);
Tensor scalar_mul(double s, const Tensor& a);
Tensor add_scalar(const Tensor& a, double s);

Tensor neg(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor abs(const Tensor& x);
// Subgradient 0 at x == 0.
Tensor sqrt(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor square(const Tensor& x);

// Sum of every element, rank-0 result.
Tensor sum(const Tensor& x);
Tensor sum(const Tensor& x, int axis, bool keepdim = false);
Tensor mean(const Tensor& x);
Tensor mean(const Tensor& x, int axis, bool keepdim = false);
// Max along `axis`; the gradient goes to the first maximal entry.
Tensor max(const Tensor& x, int axis, bool keepdim = false);

Tensor reshape(const Tensor& x, Shape shape);
// `axes` is a permutation of 0..rank-1.
Tensor transpose(const Tensor& x, const std::vector<std::size_t>& axes);
// Swaps the last two axes.
Tensor transpose_last(const Tensor& x);
Tensor concat(std::span<const Tensor> parts, int axis);
Tensor concat(std::initializer_list<Tensor> parts, int axis);
Tensor narrow(const Tensor& x, int axis, std::size_t start, std::size_t length);
std::vector<Tensor> split(const Tensor& x, int axis,
                          const std::vector<std::size_t>& lengths);
// Rows of x along axis 0.
Tensor index_select(const Tensor& x, std::span<const std::size_t> rows);

// a[..., m, k] x b[..., k, n]; leading extents broadcast.
Tensor matmul(const Tensor& a, const Tensor& b);

Tensor softmax(const Tensor& x, int axis);
Tensor log_softmax(const Tensor& x, int axis);
// Normalizes over the last axis with population variance.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

// x[b, t, c_in] with kernel[k, c_in, c_out], zero "same" padding, odd k.
Tensor conv1d(const Tensor& x, const Tensor& kernel);

// Gathers rows of table[V, d]; the result has shape lead + {d}.
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids,
                 Shape lead);

// x[n, c] -> y[n] with y[i] = x[i, index[i]].
Tensor pick(const Tensor& x, std::span<const std::size_t> index);

// Row-wise cosine similarity over the last axis. Rows with zero norm give 0
// with zero gradient.
Tensor cosine_similarity(const Tensor& a, const Tensor& b);

}  // namespace cormult::ops
