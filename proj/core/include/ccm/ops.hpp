#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ccm/tensor.hpp"

/// Differentiable tensor operations.
///
/// Every op records a graph node when grad mode is on and at least one input
/// requires grad. Backward rules are built from these same ops, so gradients
/// can be differentiated again.
///
/// Image tensors are NCHW. Convolution kernels are laid out [3, 3, in, out]
/// and dense weights [in, out]; the output-unit axis is last in both.
namespace ccm::ops {

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
/// Callers keep b away from zero.
Tensor div(const Tensor& a, const Tensor& b);

/// scale * x + shift.
Tensor affine(const Tensor& x, double scale, double shift = 0.0);
Tensor neg(const Tensor& x);
/// x^exponent elementwise; callers keep x inside the real domain. Exponent
/// 0.5 is evaluated with sqrt, so it is correctly rounded.
Tensor pow_scalar(const Tensor& x, double exponent);
Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

/// Views x as [outer, mid, inner] and sums the middle axis. The result has
/// `out_shape`, which must hold outer * inner elements.
Tensor reduce_mid(const Tensor& x, std::size_t outer, std::size_t mid,
                  std::size_t inner, Shape out_shape);
/// Adjoint of reduce_mid: repeats y (outer * inner elements) along a new
/// middle axis of length `mid`, producing `out_shape`.
Tensor expand_mid(const Tensor& y, std::size_t outer, std::size_t mid,
                  std::size_t inner, Shape out_shape);

/// Sum of all elements, shape {1}.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Broadcasts a one-element tensor to `shape`.
Tensor expand_scalar(const Tensor& s, Shape shape);
/// [R, C] -> [C].
Tensor sum_rows(const Tensor& x);
/// [R, C] -> [R].
Tensor sum_cols(const Tensor& x);
/// [C] -> [rows, C].
Tensor broadcast_rows(const Tensor& v, std::size_t rows);
/// [R] -> [R, cols].
Tensor broadcast_cols(const Tensor& v, std::size_t cols);

/// [N, C, H, W] -> [N, C], mean over the spatial extent.
Tensor spatial_mean(const Tensor& x);
/// [N, C] -> [N, C, H, W].
Tensor spatial_broadcast(const Tensor& v, std::size_t height, std::size_t width);
/// Adds a per-channel bias [C] to an NCHW tensor.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

/// op(a) * op(b) for 2-D operands, op = transpose when the flag is set.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false,
              bool transpose_b = false);

/// 3x3 convolution (cross-correlation), stride 1, zero padding 1.
/// x [N, Cin, H, W], kernel [3, 3, Cin, Cout] -> [N, Cout, H, W].
Tensor conv2d(const Tensor& x, const Tensor& kernel);
/// Gradient of conv2d w.r.t. its input: gy [N, Cout, H, W] -> [N, Cin, H, W].
Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel);
/// Gradient of conv2d w.r.t. its kernel: -> [3, 3, Cin, Cout].
Tensor conv2d_kernel_grad(const Tensor& x, const Tensor& grad_out);

/// 2x2 average pooling, stride 2. Odd extents are floored (7 -> 3).
Tensor avg_pool2d(const Tensor& x);
/// Adjoint of avg_pool2d: spreads each value / 4 over its window in an
/// [N, C, height, width] output; cells outside every window stay zero.
Tensor avg_unpool2d(const Tensor& y, std::size_t height, std::size_t width);

/// Row-wise softmax of [N, K] logits, max-subtracted.
Tensor softmax(const Tensor& logits);
/// Mean over rows of -log softmax(logits)[label]. Labels must be in [0, K).
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Per-(example, channel) normalisation over H x W without affine terms.
Tensor instance_norm(const Tensor& x, double eps = 1e-5);
/// Gradient of instance_norm w.r.t. x given the output gradient.
Tensor instance_norm_backward(const Tensor& x, const Tensor& grad_out, double eps = 1e-5);

/// Concatenation along axis 0. Trailing extents must agree.
Tensor concat(std::span<const Tensor> parts);
/// Gathers rows (slices along axis 0) in the given order; repeats allowed.
Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows);
/// Adjoint of index_rows: sums rows of g into a tensor with `num_rows` rows.
Tensor scatter_rows(const Tensor& g, std::span<const std::size_t> rows,
                    std::size_t num_rows);

}  // namespace ccm::ops
