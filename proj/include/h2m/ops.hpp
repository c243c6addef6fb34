#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "h2m/tensor.hpp"

namespace h2m {

class Rng;

// Elementwise binary ops broadcast numpy-style (shapes aligned from the right,
// size-1 axes stretch).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor neg(const Tensor& x);
Tensor square(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
// Gradient passes only where lo < x < hi.
Tensor clamp(const Tensor& x, double lo, double hi);

// a[..., k] x b[k, n] -> [..., n]; leading axes of a are flattened into rows.
Tensor matmul(const Tensor& a, const Tensor& b);
// Batched product of [B, m, k] and [B, k, n] (either side optionally
// transposed in its last two axes).
Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);
// x[..., k] W[k, n] + bias[n]; bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor softmax_rows(const Tensor& x);
// Normalizes over the last axis. gain/bias may be undefined (no affine).
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// Mean of squared difference over all elements.
Tensor mse(const Tensor& a, const Tensor& b);

// x[B, C, H, W] * w[O, C, k, k] -> [B, O, Ho, Wo]; bias[O] may be undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad);
// x[B, C, H, W], w[C, O, k, k] -> [B, O, (H-1)s - 2p + k, ...]
Tensor conv_transpose2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride,
                        std::size_t pad);

// Rows of table[V, d] selected by index -> [n, d].
Tensor embedding(const Tensor& table, std::span<const int> indices);
// Mean negative log-likelihood of integer targets under row-wise softmax(logits[n, M]).
Tensor cross_entropy(const Tensor& logits, std::span<const int> targets);

// Standard transformer sin/cos table, one row per position -> [n, dim]. Constant.
Tensor sinusoidal_embedding(std::span<const double> positions, std::size_t dim);

Tensor randn(const Shape& shape, Rng& rng, double stddev = 1.0);
Tensor rand_uniform(const Shape& shape, Rng& rng, double lo = 0.0, double hi = 1.0);

}  // namespace h2m
