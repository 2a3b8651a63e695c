#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tmae/tensor.hpp"

namespace tmae {

// Elementwise arithmetic with numpy-style broadcasting.
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <typename T> Tensor<T> scale(const Tensor<T>& a, double s);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& a, double s);
template <typename T> Tensor<T> square(const Tensor<T>& a);
template <typename T> Tensor<T> exp(const Tensor<T>& a);
template <typename T> Tensor<T> log(const Tensor<T>& a);
template <typename T> Tensor<T> relu(const Tensor<T>& a);
template <typename T> Tensor<T> tanh(const Tensor<T>& a);

/// Tanh-form GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
template <typename T> Tensor<T> gelu(const Tensor<T>& a);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <typename T> Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return div(a, b); }

// Reductions (64-bit accumulation).
template <typename T> Tensor<T> sum(const Tensor<T>& a);
template <typename T> Tensor<T> mean(const Tensor<T>& a);
template <typename T> Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target);

// Layout.
template <typename T> Tensor<T> reshape(const Tensor<T>& a, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& dims);
template <typename T> Tensor<T> transpose(const Tensor<T>& a, std::size_t d0, std::size_t d1);
template <typename T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <typename T> Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length);

/// x [B x M x D], ids [B x K] flattened (values < M) -> [B x K x D].
template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> ids, std::size_t k);

// Linear algebra.
/// [m x k] . [k x n] or batched [b x m x k] . [b x k x n].
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
/// x [... x in] . w [in x out] + bias [out]; bias may be undefined.
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

// Normalization and attention primitives.
template <typename T> Tensor<T> softmax(const Tensor<T>& x, std::size_t axis);
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis);
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps);

// Spatial ops on N x C x H x W.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad);
/// w is [C_in x C_out x kh x kw]; output extent (H - 1) * stride - 2 pad + kh.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           std::size_t stride, std::size_t pad);
template <typename T> Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t window, std::size_t stride);
template <typename T> Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t window, std::size_t stride);
template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);
/// Half-pixel-centre bilinear interpolation (align_corners = false).
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

/// Class-weighted pixel cross-entropy over logits [B x K x H x W].
///
/// labels holds B*H*W entries in {0..K-1} or ignore_index. Weights are
/// rescaled by their maximum before use; the loss is the weighted sum of
/// -log p_y divided by the summed weight of scored pixels (0 when none).
template <typename T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                                 std::span<const double> class_weights, int ignore_index = 255);

/// Per-pixel argmax over the channel axis of [B x K x H x W]; ties go to the
/// lower class index.
template <typename T> std::vector<std::uint8_t> argmax_channels(const Tensor<T>& logits);

}  // namespace tmae
