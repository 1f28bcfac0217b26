#pragma once

// Raw numeric kernels behind the differentiable ops. No graph logic here.

#include <cstddef>
#include <span>

namespace ccm::kernels {

struct ConvDims {
  std::size_t batch, in_channels, out_channels, height, width;
};

/// y[n, co] = sum_{kh, kw, ci} k[kh, kw, ci, co] * x[n, ci, h + kh - 1, w + kw - 1].
void conv3x3_forward(const ConvDims& d, std::span<const double> x, std::span<const double> kernel,
                     std::span<double> y);
void conv3x3_input_grad(const ConvDims& d, std::span<const double> gy,
                        std::span<const double> kernel, std::span<double> gx);
void conv3x3_kernel_grad(const ConvDims& d, std::span<const double> x, std::span<const double> gy,
                         std::span<double> gk);

/// c = op(a) * op(b); shapes of op(a) [m, k] and op(b) [k, n].
void gemm(bool transpose_a, bool transpose_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c);

}  // namespace ccm::kernels
