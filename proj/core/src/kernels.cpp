#include "kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>

namespace ccm::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

// Patch matrix of one image: row (kh * 3 + kw) * Cin + ci holds channel ci
// shifted by (kh - 1, kw - 1), zero padded; one column per output pixel.
void im2col(const ConvDims& d, const double* x, double* cols) {
  const std::size_t H = d.height, W = d.width, HW = H * W;
  for (std::size_t kh = 0; kh < 3; ++kh) {
    for (std::size_t kw = 0; kw < 3; ++kw) {
      for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
        double* row = cols + ((kh * 3 + kw) * d.in_channels + ci) * HW;
        const double* plane = x + ci * HW;
        for (std::size_t h = 0; h < H; ++h) {
          const long sh = static_cast<long>(h) + static_cast<long>(kh) - 1;
          double* out = row + h * W;
          if (sh < 0 || sh >= static_cast<long>(H)) {
            std::fill(out, out + W, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(sh) * W;
          if (kw == 0) {
            out[0] = 0.0;
            std::copy(src, src + W - 1, out + 1);
          } else if (kw == 1) {
            std::copy(src, src + W, out);
          } else {
            std::copy(src + 1, src + W, out);
            out[W - 1] = 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: accumulates patch rows back into image planes.
void col2im(const ConvDims& d, const double* cols, double* x) {
  const std::size_t H = d.height, W = d.width, HW = H * W;
  for (std::size_t kh = 0; kh < 3; ++kh) {
    for (std::size_t kw = 0; kw < 3; ++kw) {
      for (std::size_t ci = 0; ci < d.in_channels; ++ci) {
        const double* row = cols + ((kh * 3 + kw) * d.in_channels + ci) * HW;
        double* plane = x + ci * HW;
        for (std::size_t h = 0; h < H; ++h) {
          const long sh = static_cast<long>(h) + static_cast<long>(kh) - 1;
          if (sh < 0 || sh >= static_cast<long>(H)) continue;
          const double* in = row + h * W;
          double* dst = plane + static_cast<std::size_t>(sh) * W;
          if (kw == 0) {
            for (std::size_t w = 1; w < W; ++w) dst[w - 1] += in[w];
          } else if (kw == 1) {
            for (std::size_t w = 0; w < W; ++w) dst[w] += in[w];
          } else {
            for (std::size_t w = 0; w + 1 < W; ++w) dst[w + 1] += in[w];
          }
        }
      }
    }
  }
}

}  // namespace

void conv3x3_forward(const ConvDims& d, std::span<const double> x, std::span<const double> kernel,
                     std::span<double> y) {
  const std::size_t HW = d.height * d.width;
  const std::size_t patch = 9 * d.in_channels;
  std::vector<double> cols(patch * HW);
  ConstMap k(kernel.data(), patch, d.out_channels);
  for (std::size_t n = 0; n < d.batch; ++n) {
    im2col(d, x.data() + n * d.in_channels * HW, cols.data());
    ConstMap c(cols.data(), patch, HW);
    MutMap out(y.data() + n * d.out_channels * HW, d.out_channels, HW);
    out.noalias() = k.transpose() * c;
  }
}

void conv3x3_input_grad(const ConvDims& d, std::span<const double> gy,
                        std::span<const double> kernel, std::span<double> gx) {
  const std::size_t HW = d.height * d.width;
  const std::size_t patch = 9 * d.in_channels;
  std::vector<double> cols(patch * HW);
  ConstMap k(kernel.data(), patch, d.out_channels);
  std::fill(gx.begin(), gx.end(), 0.0);
  for (std::size_t n = 0; n < d.batch; ++n) {
    ConstMap g(gy.data() + n * d.out_channels * HW, d.out_channels, HW);
    MutMap c(cols.data(), patch, HW);
    c.noalias() = k * g;
    col2im(d, cols.data(), gx.data() + n * d.in_channels * HW);
  }
}

void conv3x3_kernel_grad(const ConvDims& d, std::span<const double> x, std::span<const double> gy,
                         std::span<double> gk) {
  const std::size_t HW = d.height * d.width;
  const std::size_t patch = 9 * d.in_channels;
  std::vector<double> cols(patch * HW);
  MutMap out(gk.data(), patch, d.out_channels);
  out.setZero();
  for (std::size_t n = 0; n < d.batch; ++n) {
    im2col(d, x.data() + n * d.in_channels * HW, cols.data());
    ConstMap c(cols.data(), patch, HW);
    ConstMap g(gy.data() + n * d.out_channels * HW, d.out_channels, HW);
    out.noalias() += c * g.transpose();
  }
}

void gemm(bool transpose_a, bool transpose_b, std::size_t m, std::size_t n, std::size_t k,
          std::span<const double> a, std::span<const double> b, std::span<double> c) {
  MutMap out(c.data(), m, n);
  // Stored shapes: a is [m, k] or [k, m]; b is [k, n] or [n, k].
  ConstMap am(a.data(), transpose_a ? k : m, transpose_a ? m : k);
  ConstMap bm(b.data(), transpose_b ? n : k, transpose_b ? k : n);
  if (!transpose_a && !transpose_b) {
    out.noalias() = am * bm;
  } else if (!transpose_a) {
    out.noalias() = am * bm.transpose();
  } else if (!transpose_b) {
    out.noalias() = am.transpose() * bm;
  } else {
    out.noalias() = am.transpose() * bm.transpose();
  }
}

}  // namespace ccm::kernels
