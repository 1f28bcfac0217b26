#include "ccm/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "ccm/autograd.hpp"
#include "ccm/error.hpp"
#include "kernels.hpp"

namespace ccm::ops {

namespace {

void check_finite(std::string_view op, const Tensor& t, const char* role) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value in " + role);
    }
  }
}

void debug_check(std::string_view op, std::initializer_list<const Tensor*> inputs,
                 const Tensor& out) {
  if (!debug_checks_enabled()) return;
  for (const Tensor* t : inputs) check_finite(op, *t, "input");
  check_finite(op, out, "output");
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

void require_rank(std::string_view op, const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " +
                         std::to_string(rank) + ", got " + shape_str(t.shape()));
  }
}

template <class NodeT, class... Args>
void record(Tensor& out, std::vector<Tensor> inputs, Args&&... args) {
  attach_node(out, std::make_shared<NodeT>(std::move(inputs), std::forward<Args>(args)...));
}

template <class F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out = Tensor::uninitialized(x.shape());
  auto src = x.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
  return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
  Tensor out = Tensor::uninitialized(a.shape());
  auto x = a.data();
  auto y = b.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
  return out;
}

double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

// ---------------------------------------------------------------------------
// Backward rules.

class AddNode final : public Node {
 public:
  using Node::Node;
  std::string_view name() const override { return "add"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>&) override {
    return {g, g};
  }
};

class SubNode final : public Node {
 public:
  using Node::Node;
  std::string_view name() const override { return "sub"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>& wanted) override {
    return {g, wanted[1] ? neg(g) : Tensor()};
  }
};

class MulNode final : public Node {
 public:
  using Node::Node;
  std::string_view name() const override { return "mul"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>& wanted) override {
    const Tensor& a = inputs()[0];
    const Tensor& b = inputs()[1];
    return {wanted[0] ? mul(g, b) : Tensor(), wanted[1] ? mul(g, a) : Tensor()};
  }
};

class DivNode final : public Node {
 public:
  using Node::Node;
  std::string_view name() const override { return "div"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>& wanted) override {
    const Tensor& a = inputs()[0];
    const Tensor& b = inputs()[1];
    Tensor ga = div(g, b);
    return {wanted[0] ? ga : Tensor(), wanted[1] ? neg(mul(ga, div(a, b))) : Tensor()};
  }
};

class AffineNode final : public Node {
 public:
  AffineNode(std::vector<Tensor> in, double scale) : Node(std::move(in)), scale_(scale) {}
  std::string_view name() const override { return "affine"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>&) override {
    return {affine(g, scale_)};
  }

 private:
  double scale_;
};

class PowNode final : public Node {
 public:
  PowNode(std::vector<Tensor> in, double p) : Node(std::move(in)), p_(p) {}
  std::string_view name() const override { return "pow"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>&) override {
    return {mul(g, affine(pow_scalar(inputs()[0], p_ - 1.0), p_))};
  }

 private:
  double p_;
};

class ReluNode final : public Node {
 public:
  using Node::Node;
  std::string_view name() const override { return "relu"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>&) override {
    // The mask is piecewise constant, so it is not differentiated.
    if (!grad_mode_enabled())
      return {map_binary(g, inputs()[0], [](double gv, double v) { return v > 0.0 ? gv : 0.0; })};
    Tensor mask = map_unary(inputs()[0], [](double v) { return v > 0.0 ? 1.0 : 0.0; });
    return {mul(g, mask)};
  }
};

class SigmoidNode final : public Node {
 public:
  using Node::Node;
  std::string_view name() const override { return "sigmoid"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>&) override {
    Tensor s = sigmoid(inputs()[0]);
    return {mul(g, mul(s, affine(s, -1.0, 1.0)))};
  }
};

class ReshapeNode final : public Node {
 public:
  using Node::Node;
  std::string_view name() const override { return "reshape"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>&) override {
    return {reshape(g, inputs()[0].shape())};
  }
};

struct MidDims {
  std::size_t outer, mid, inner;
};

class ReduceMidNode final : public Node {
 public:
  ReduceMidNode(std::vector<Tensor> in, MidDims d) : Node(std::move(in)), d_(d) {}
  std::string_view name() const override { return "reduce_mid"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>&) override {
    return {expand_mid(g, d_.outer, d_.mid, d_.inner, inputs()[0].shape())};
  }

 private:
  MidDims d_;
};

class ExpandMidNode final : public Node {
 public:
  ExpandMidNode(std::vector<Tensor> in, MidDims d) : Node(std::move(in)), d_(d) {}
  std::string_view name() const override { return "expand_mid"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>&) override {
    return {reduce_mid(g, d_.outer, d_.mid, d_.inner, inputs()[0].shape())};
  }

 private:
  MidDims d_;
};

class ChannelBiasNode final : public Node {
 public:
  using Node::Node;
  std::string_view name() const override { return "add_channel_bias"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>& wanted) override {
    Tensor gb;
    if (wanted[1]) {
      const Shape& s = g.shape();
      Tensor per_plane = reduce_mid(g, s[0] * s[1], s[2] * s[3], 1, {s[0], s[1]});
      gb = sum_rows(per_plane);
    }
    return {g, gb};
  }
};

// Per-plane statistics of an NCHW tensor: mean and 1 / sqrt(var + eps).
struct PlaneStats {
  std::vector<double> mean, inv_std;
};

PlaneStats plane_stats(const Tensor& x, double eps) {
  const std::size_t planes = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  PlaneStats st{std::vector<double>(planes), std::vector<double>(planes)};
  auto src = x.data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double* v = src.data() + p * hw;
    double m = 0.0;
    for (std::size_t i = 0; i < hw; ++i) m += v[i];
    m /= static_cast<double>(hw);
    double var = 0.0;
    for (std::size_t i = 0; i < hw; ++i) var += (v[i] - m) * (v[i] - m);
    var /= static_cast<double>(hw);
    st.mean[p] = m;
    st.inv_std[p] = 1.0 / std::sqrt(var + eps);
  }
  return st;
}

Tensor instance_norm_composed(const Tensor& x, double eps, Tensor* inv_std_out) {
  const std::size_t h = x.dim(2), w = x.dim(3);
  Tensor centered = sub(x, spatial_broadcast(spatial_mean(x), h, w));
  Tensor var = spatial_mean(mul(centered, centered));
  Tensor inv_std = pow_scalar(affine(var, 1.0, eps), -0.5);
  if (inv_std_out) *inv_std_out = inv_std;
  return mul(centered, spatial_broadcast(inv_std, h, w));
}

// dx = r * (g - mean(g) - y * mean(g * y)) per plane, y the normalised
// input and r = 1 / sqrt(var + eps).
class InstanceNormNode final : public Node {
 public:
  InstanceNormNode(std::vector<Tensor> in, double eps) : Node(std::move(in)), eps_(eps) {}
  std::string_view name() const override { return "instance_norm"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>&) override {
    return {instance_norm_backward(inputs()[0], g, eps_)};
  }

 private:
  double eps_;
};

// Adjoint of instance_norm_backward(x, g) for an upstream u, per plane of n
// elements. The map g -> dx is self-adjoint, so the g part is
// instance_norm_backward(x, u). With a = <u, dx>, b = <u, y>, m = mean(g y)
// and h = instance_norm_backward(x, u), the x part is
//   -(r a / n) y - r m h - (r b / n) dx.
class InstanceNormGradNode final : public Node {
 public:
  InstanceNormGradNode(std::vector<Tensor> in, double eps) : Node(std::move(in)), eps_(eps) {}
  std::string_view name() const override { return "instance_norm_backward"; }
  std::vector<Tensor> backward(const Tensor& u, const std::vector<bool>& wanted) override {
    const Tensor& x = inputs()[0];
    const Tensor& g = inputs()[1];
    if (grad_mode_enabled()) return composed(x, g, u, wanted);
    const PlaneStats st = plane_stats(x, eps_);
    const std::size_t hw = x.dim(2) * x.dim(3);
    const double inv_n = 1.0 / static_cast<double>(hw);
    Tensor gx = wanted[0] ? Tensor::uninitialized(x.shape()) : Tensor();
    Tensor gg = wanted[1] ? Tensor::uninitialized(x.shape()) : Tensor();
    auto xs = x.data(), gs = g.data(), us = u.data();
    for (std::size_t p = 0; p < st.mean.size(); ++p) {
      const double* xv = xs.data() + p * hw;
      const double* gv = gs.data() + p * hw;
      const double* uv = us.data() + p * hw;
      const double mu = st.mean[p], r = st.inv_std[p];
      double sg = 0.0, sgy = 0.0, su = 0.0, suy = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        const double y = (xv[i] - mu) * r;
        sg += gv[i];
        sgy += gv[i] * y;
        su += uv[i];
        suy += uv[i] * y;
      }
      const double mg = sg * inv_n, m = sgy * inv_n, mu_u = su * inv_n, b = suy;
      double a = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        const double y = (xv[i] - mu) * r;
        a += uv[i] * r * (gv[i] - mg - y * m);
      }
      for (std::size_t i = 0; i < hw; ++i) {
        const double y = (xv[i] - mu) * r;
        const double h = r * (uv[i] - mu_u - y * b * inv_n);
        if (wanted[1]) gg.mutable_data()[p * hw + i] = h;
        if (wanted[0]) {
          const double dx = r * (gv[i] - mg - y * m);
          gx.mutable_data()[p * hw + i] = -r * a * inv_n * y - r * m * h - r * b * inv_n * dx;
        }
      }
    }
    return {gx, gg};
  }

 private:
  std::vector<Tensor> composed(const Tensor& x, const Tensor& g, const Tensor& u,
                               const std::vector<bool>& wanted) const {
    const std::size_t h = x.dim(2), w = x.dim(3);
    const double inv_n = 1.0 / static_cast<double>(h * w);
    Tensor hu = instance_norm_backward(x, u, eps_);
    if (!wanted[0]) return {Tensor(), hu};
    Tensor inv_std;
    Tensor y = instance_norm_composed(x, eps_, &inv_std);
    Tensor dx = instance_norm_backward(x, g, eps_);
    auto per_plane_sum = [&](const Tensor& t) { return affine(spatial_mean(t), 1.0 / inv_n); };
    auto spread = [&](const Tensor& t) { return spatial_broadcast(t, h, w); };
    Tensor a = per_plane_sum(mul(u, dx));
    Tensor b = per_plane_sum(mul(u, y));
    Tensor m = spatial_mean(mul(g, y));
    Tensor t1 = mul(spread(affine(mul(inv_std, a), inv_n)), y);
    Tensor t2 = mul(spread(mul(inv_std, m)), hu);
    Tensor t3 = mul(spread(affine(mul(inv_std, b), inv_n)), dx);
    return {neg(add(add(t1, t2), t3)), wanted[1] ? hu : Tensor()};
  }

  double eps_;
};

class MatmulNode final : public Node {
 public:
  MatmulNode(std::vector<Tensor> in, bool ta, bool tb) : Node(std::move(in)), ta_(ta), tb_(tb) {}
  std::string_view name() const override { return "matmul"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>& wanted) override {
    const Tensor& a = inputs()[0];
    const Tensor& b = inputs()[1];
    Tensor ga, gb;
    if (!ta_ && !tb_) {
      if (wanted[0]) ga = matmul(g, b, false, true);
      if (wanted[1]) gb = matmul(a, g, true, false);
    } else if (!ta_ && tb_) {
      if (wanted[0]) ga = matmul(g, b, false, false);
      if (wanted[1]) gb = matmul(g, a, true, false);
    } else if (ta_ && !tb_) {
      if (wanted[0]) ga = matmul(b, g, false, true);
      if (wanted[1]) gb = matmul(a, g, false, false);
    } else {
      if (wanted[0]) ga = matmul(b, g, true, true);
      if (wanted[1]) gb = matmul(g, a, true, true);
    }
    return {ga, gb};
  }

 private:
  bool ta_, tb_;
};

// The three convolution ops are bilinear and closed under differentiation:
// each one's partial derivatives are expressed through the other two.
class Conv2dNode final : public Node {
 public:
  using Node::Node;
  std::string_view name() const override { return "conv2d"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>& wanted) override {
    const Tensor& x = inputs()[0];
    const Tensor& k = inputs()[1];
    return {wanted[0] ? conv2d_input_grad(g, k) : Tensor(),
            wanted[1] ? conv2d_kernel_grad(x, g) : Tensor()};
  }
};

class Conv2dInputGradNode final : public Node {
 public:
  using Node::Node;
  std::string_view name() const override { return "conv2d_input_grad"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>& wanted) override {
    const Tensor& gy = inputs()[0];
    const Tensor& k = inputs()[1];
    return {wanted[0] ? conv2d(g, k) : Tensor(), wanted[1] ? conv2d_kernel_grad(g, gy) : Tensor()};
  }
};

class Conv2dKernelGradNode final : public Node {
 public:
  using Node::Node;
  std::string_view name() const override { return "conv2d_kernel_grad"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>& wanted) override {
    const Tensor& x = inputs()[0];
    const Tensor& gy = inputs()[1];
    return {wanted[0] ? conv2d_input_grad(gy, g) : Tensor(), wanted[1] ? conv2d(x, g) : Tensor()};
  }
};

class AvgPoolNode final : public Node {
 public:
  using Node::Node;
  std::string_view name() const override { return "avg_pool2d"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>&) override {
    const Tensor& x = inputs()[0];
    return {avg_unpool2d(g, x.dim(2), x.dim(3))};
  }
};

class AvgUnpoolNode final : public Node {
 public:
  using Node::Node;
  std::string_view name() const override { return "avg_unpool2d"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>&) override {
    return {avg_pool2d(g)};
  }
};

class SoftmaxNode final : public Node {
 public:
  using Node::Node;
  std::string_view name() const override { return "softmax"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>&) override {
    Tensor s = softmax(inputs()[0]);
    const std::size_t k = s.dim(1);
    return {mul(s, sub(g, broadcast_cols(sum_cols(mul(g, s)), k)))};
  }
};

class CrossEntropyNode final : public Node {
 public:
  CrossEntropyNode(std::vector<Tensor> in, std::vector<int> labels)
      : Node(std::move(in)), labels_(std::move(labels)) {}
  std::string_view name() const override { return "cross_entropy"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>&) override {
    const Tensor& z = inputs()[0];
    const std::size_t n = z.dim(0), k = z.dim(1);
    Tensor onehot({n, k});
    auto oh = onehot.mutable_data();
    for (std::size_t i = 0; i < n; ++i) oh[i * k + static_cast<std::size_t>(labels_[i])] = 1.0;
    Tensor scale = expand_scalar(affine(g, 1.0 / static_cast<double>(n)), z.shape());
    return {mul(sub(softmax(z), onehot), scale)};
  }

 private:
  std::vector<int> labels_;
};

class ConcatNode final : public Node {
 public:
  using Node::Node;
  std::string_view name() const override { return "concat"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>& wanted) override {
    std::vector<Tensor> out(inputs().size());
    std::size_t offset = 0;
    for (std::size_t i = 0; i < inputs().size(); ++i) {
      const std::size_t rows = inputs()[i].dim(0);
      if (wanted[i]) {
        std::vector<std::size_t> idx(rows);
        std::iota(idx.begin(), idx.end(), offset);
        out[i] = index_rows(g, idx);
      }
      offset += rows;
    }
    return out;
  }
};

class IndexRowsNode final : public Node {
 public:
  IndexRowsNode(std::vector<Tensor> in, std::vector<std::size_t> rows)
      : Node(std::move(in)), rows_(std::move(rows)) {}
  std::string_view name() const override { return "index_rows"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>&) override {
    return {scatter_rows(g, rows_, inputs()[0].dim(0))};
  }

 private:
  std::vector<std::size_t> rows_;
};

class ScatterRowsNode final : public Node {
 public:
  ScatterRowsNode(std::vector<Tensor> in, std::vector<std::size_t> rows)
      : Node(std::move(in)), rows_(std::move(rows)) {}
  std::string_view name() const override { return "scatter_rows"; }
  std::vector<Tensor> backward(const Tensor& g, const std::vector<bool>&) override {
    return {index_rows(g, rows_)};
  }

 private:
  std::vector<std::size_t> rows_;
};

kernels::ConvDims conv_dims(std::string_view op, const Tensor& image, const Tensor& kernel,
                            bool image_is_output) {
  require_rank(op, image, 4, "image tensor");
  require_rank(op, kernel, 4, "kernel");
  if (kernel.dim(0) != 3 || kernel.dim(1) != 3) {
    throw DimensionError(std::string(op) + ": kernel must be [3, 3, in, out], got " +
                         shape_str(kernel.shape()));
  }
  const std::size_t channels = image_is_output ? kernel.dim(3) : kernel.dim(2);
  if (image.dim(1) != channels) {
    throw DimensionError(std::string(op) + ": image has " + std::to_string(image.dim(1)) +
                         " channels, kernel " + shape_str(kernel.shape()) + " expects " +
                         std::to_string(channels));
  }
  return {image.dim(0), kernel.dim(2), kernel.dim(3), image.dim(2), image.dim(3)};
}

}  // namespace

// ---------------------------------------------------------------------------
// Elementwise.

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Tensor out = map_binary(a, b, [](double x, double y) { return x + y; });
  debug_check("add", {&a, &b}, out);
  if (should_record({&a, &b})) record<AddNode>(out, {a, b});
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Tensor out = map_binary(a, b, [](double x, double y) { return x - y; });
  debug_check("sub", {&a, &b}, out);
  if (should_record({&a, &b})) record<SubNode>(out, {a, b});
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Tensor out = map_binary(a, b, [](double x, double y) { return x * y; });
  debug_check("mul", {&a, &b}, out);
  if (should_record({&a, &b})) record<MulNode>(out, {a, b});
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape("div", a, b);
  Tensor out = map_binary(a, b, [](double x, double y) { return x / y; });
  debug_check("div", {&a, &b}, out);
  if (should_record({&a, &b})) record<DivNode>(out, {a, b});
  return out;
}

Tensor affine(const Tensor& x, double scale, double shift) {
  Tensor out = map_unary(x, [=](double v) { return scale * v + shift; });
  debug_check("affine", {&x}, out);
  if (should_record({&x})) record<AffineNode>(out, {x}, scale);
  return out;
}

Tensor neg(const Tensor& x) { return affine(x, -1.0); }

Tensor pow_scalar(const Tensor& x, double exponent) {
  Tensor out = exponent == 0.0   ? Tensor::ones(x.shape())
               : exponent == 0.5 ? map_unary(x, [](double v) { return std::sqrt(v); })
                                 : map_unary(x, [=](double v) { return std::pow(v, exponent); });
  debug_check("pow_scalar", {&x}, out);
  if (exponent != 0.0 && should_record({&x})) record<PowNode>(out, {x}, exponent);
  return out;
}

Tensor relu(const Tensor& x) {
  Tensor out = map_unary(x, [](double v) { return v > 0.0 ? v : 0.0; });
  debug_check("relu", {&x}, out);
  if (should_record({&x})) record<ReluNode>(out, {x});
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = map_unary(x, stable_sigmoid);
  debug_check("sigmoid", {&x}, out);
  if (should_record({&x})) record<SigmoidNode>(out, {x});
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  Tensor out = Tensor::uninitialized(std::move(shape));
  std::copy(x.data().begin(), x.data().end(), out.mutable_data().begin());
  if (should_record({&x})) record<ReshapeNode>(out, {x});
  return out;
}

// ---------------------------------------------------------------------------
// Reductions and broadcasts.

Tensor reduce_mid(const Tensor& x, std::size_t outer, std::size_t mid, std::size_t inner,
                  Shape out_shape) {
  if (outer * mid * inner != x.numel() || shape_numel(out_shape) != outer * inner) {
    throw DimensionError("reduce_mid: [" + std::to_string(outer) + ", " + std::to_string(mid) +
                         ", " + std::to_string(inner) + "] does not fit " + shape_str(x.shape()) +
                         " -> " + shape_str(out_shape));
  }
  Tensor out(std::move(out_shape));
  auto src = x.data();
  auto dst = out.mutable_data();
  if (inner == 1) {
    for (std::size_t o = 0; o < outer; ++o) {
      const double* in = src.data() + o * mid;
      double acc = 0.0;
      for (std::size_t m = 0; m < mid; ++m) acc += in[m];
      dst[o] = acc;
    }
  } else {
    for (std::size_t o = 0; o < outer; ++o) {
      double* row = dst.data() + o * inner;
      for (std::size_t m = 0; m < mid; ++m) {
        const double* in = src.data() + (o * mid + m) * inner;
        for (std::size_t i = 0; i < inner; ++i) row[i] += in[i];
      }
    }
  }
  debug_check("reduce_mid", {&x}, out);
  if (should_record({&x})) record<ReduceMidNode>(out, {x}, MidDims{outer, mid, inner});
  return out;
}

Tensor expand_mid(const Tensor& y, std::size_t outer, std::size_t mid, std::size_t inner,
                  Shape out_shape) {
  if (outer * inner != y.numel() || shape_numel(out_shape) != outer * mid * inner) {
    throw DimensionError("expand_mid: [" + std::to_string(outer) + ", " + std::to_string(mid) +
                         ", " + std::to_string(inner) + "] does not fit " + shape_str(y.shape()) +
                         " -> " + shape_str(out_shape));
  }
  Tensor out = Tensor::uninitialized(std::move(out_shape));
  auto src = y.data();
  auto dst = out.mutable_data();
  for (std::size_t o = 0; o < outer; ++o) {
    const double* row = src.data() + o * inner;
    if (inner == 1) {
      std::fill_n(dst.data() + o * mid, mid, row[0]);
      continue;
    }
    for (std::size_t m = 0; m < mid; ++m) {
      std::copy(row, row + inner, dst.data() + (o * mid + m) * inner);
    }
  }
  debug_check("expand_mid", {&y}, out);
  if (should_record({&y})) record<ExpandMidNode>(out, {y}, MidDims{outer, mid, inner});
  return out;
}

Tensor sum(const Tensor& x) { return reduce_mid(x, 1, x.numel(), 1, {1}); }

Tensor mean(const Tensor& x) { return affine(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor expand_scalar(const Tensor& s, Shape shape) {
  if (s.numel() != 1) throw DimensionError("expand_scalar: source must hold one element");
  const std::size_t n = shape_numel(shape);
  return expand_mid(s, 1, n, 1, std::move(shape));
}

Tensor sum_rows(const Tensor& x) {
  require_rank("sum_rows", x, 2, "input");
  return reduce_mid(x, 1, x.dim(0), x.dim(1), {x.dim(1)});
}

Tensor sum_cols(const Tensor& x) {
  require_rank("sum_cols", x, 2, "input");
  return reduce_mid(x, x.dim(0), x.dim(1), 1, {x.dim(0)});
}

Tensor broadcast_rows(const Tensor& v, std::size_t rows) {
  require_rank("broadcast_rows", v, 1, "input");
  return expand_mid(v, 1, rows, v.dim(0), {rows, v.dim(0)});
}

Tensor broadcast_cols(const Tensor& v, std::size_t cols) {
  require_rank("broadcast_cols", v, 1, "input");
  return expand_mid(v, v.dim(0), cols, 1, {v.dim(0), cols});
}

Tensor spatial_mean(const Tensor& x) {
  require_rank("spatial_mean", x, 4, "input");
  const std::size_t hw = x.dim(2) * x.dim(3);
  Tensor s = reduce_mid(x, x.dim(0) * x.dim(1), hw, 1, {x.dim(0), x.dim(1)});
  return affine(s, 1.0 / static_cast<double>(hw));
}

Tensor spatial_broadcast(const Tensor& v, std::size_t height, std::size_t width) {
  require_rank("spatial_broadcast", v, 2, "input");
  return expand_mid(v, v.dim(0) * v.dim(1), height * width, 1,
                    {v.dim(0), v.dim(1), height, width});
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank("add_channel_bias", x, 4, "input");
  require_rank("add_channel_bias", bias, 1, "bias");
  if (bias.dim(0) != x.dim(1)) {
    throw DimensionError("add_channel_bias: bias " + shape_str(bias.shape()) +
                         " does not match channels of " + shape_str(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor out = Tensor::uninitialized(x.shape());
  auto src = x.data();
  auto b = bias.data();
  auto dst = out.mutable_data();
  for (std::size_t p = 0; p < planes; ++p) {
    const double bv = b[p % c];
    const double* in = src.data() + p * hw;
    double* o = dst.data() + p * hw;
    for (std::size_t i = 0; i < hw; ++i) o[i] = in[i] + bv;
  }
  debug_check("add_channel_bias", {&x, &bias}, out);
  if (should_record({&x, &bias})) record<ChannelBiasNode>(out, {x, bias});
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra and convolution.

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  require_rank("matmul", a, 2, "left operand");
  require_rank("matmul", b, 2, "right operand");
  const std::size_t m = transpose_a ? a.dim(1) : a.dim(0);
  const std::size_t k = transpose_a ? a.dim(0) : a.dim(1);
  const std::size_t kb = transpose_b ? b.dim(1) : b.dim(0);
  const std::size_t n = transpose_b ? b.dim(0) : b.dim(1);
  if (k != kb) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                         (transpose_a ? "^T" : "") + " x " + shape_str(b.shape()) +
                         (transpose_b ? "^T" : ""));
  }
  Tensor out = Tensor::uninitialized({m, n});
  kernels::gemm(transpose_a, transpose_b, m, n, k, a.data(), b.data(), out.mutable_data());
  debug_check("matmul", {&a, &b}, out);
  if (should_record({&a, &b})) record<MatmulNode>(out, {a, b}, transpose_a, transpose_b);
  return out;
}

Tensor conv2d(const Tensor& x, const Tensor& kernel) {
  const auto d = conv_dims("conv2d", x, kernel, false);
  Tensor out = Tensor::uninitialized({d.batch, d.out_channels, d.height, d.width});
  kernels::conv3x3_forward(d, x.data(), kernel.data(), out.mutable_data());
  debug_check("conv2d", {&x, &kernel}, out);
  if (should_record({&x, &kernel})) record<Conv2dNode>(out, {x, kernel});
  return out;
}

Tensor conv2d_input_grad(const Tensor& grad_out, const Tensor& kernel) {
  const auto d = conv_dims("conv2d_input_grad", grad_out, kernel, true);
  Tensor out = Tensor::uninitialized({d.batch, d.in_channels, d.height, d.width});
  kernels::conv3x3_input_grad(d, grad_out.data(), kernel.data(), out.mutable_data());
  debug_check("conv2d_input_grad", {&grad_out, &kernel}, out);
  if (should_record({&grad_out, &kernel})) record<Conv2dInputGradNode>(out, {grad_out, kernel});
  return out;
}

Tensor conv2d_kernel_grad(const Tensor& x, const Tensor& grad_out) {
  require_rank("conv2d_kernel_grad", x, 4, "input");
  require_rank("conv2d_kernel_grad", grad_out, 4, "output gradient");
  if (x.dim(0) != grad_out.dim(0) || x.dim(2) != grad_out.dim(2) || x.dim(3) != grad_out.dim(3)) {
    throw DimensionError("conv2d_kernel_grad: input " + shape_str(x.shape()) +
                         " and output gradient " + shape_str(grad_out.shape()) + " disagree");
  }
  const kernels::ConvDims d{x.dim(0), x.dim(1), grad_out.dim(1), x.dim(2), x.dim(3)};
  Tensor out = Tensor::uninitialized({3, 3, d.in_channels, d.out_channels});
  kernels::conv3x3_kernel_grad(d, x.data(), grad_out.data(), out.mutable_data());
  debug_check("conv2d_kernel_grad", {&x, &grad_out}, out);
  if (should_record({&x, &grad_out})) record<Conv2dKernelGradNode>(out, {x, grad_out});
  return out;
}

Tensor avg_pool2d(const Tensor& x) {
  require_rank("avg_pool2d", x, 4, "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < 2 || w < 2) {
    throw DimensionError("avg_pool2d: spatial extent " + shape_str(x.shape()) + " below 2x2");
  }
  const std::size_t ho = h / 2, wo = w / 2;
  Tensor out = Tensor::uninitialized({n, c, ho, wo});
  auto src = x.data();
  auto dst = out.mutable_data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* in = src.data() + p * h * w;
    double* o = dst.data() + p * ho * wo;
    for (std::size_t i = 0; i < ho; ++i) {
      const double* r0 = in + (2 * i) * w;
      const double* r1 = r0 + w;
      for (std::size_t j = 0; j < wo; ++j) {
        o[i * wo + j] = 0.25 * (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]);
      }
    }
  }
  debug_check("avg_pool2d", {&x}, out);
  if (should_record({&x})) record<AvgPoolNode>(out, {x});
  return out;
}

Tensor avg_unpool2d(const Tensor& y, std::size_t height, std::size_t width) {
  require_rank("avg_unpool2d", y, 4, "input");
  if (y.dim(2) != height / 2 || y.dim(3) != width / 2) {
    throw DimensionError("avg_unpool2d: " + shape_str(y.shape()) + " is not the pooled size of " +
                         std::to_string(height) + "x" + std::to_string(width));
  }
  const std::size_t n = y.dim(0), c = y.dim(1), ho = y.dim(2), wo = y.dim(3);
  Tensor out({n, c, height, width});
  auto src = y.data();
  auto dst = out.mutable_data();
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* in = src.data() + p * ho * wo;
    double* o = dst.data() + p * height * width;
    for (std::size_t i = 0; i < ho; ++i) {
      double* r0 = o + (2 * i) * width;
      double* r1 = r0 + width;
      for (std::size_t j = 0; j < wo; ++j) {
        const double v = 0.25 * in[i * wo + j];
        r0[2 * j] = v;
        r0[2 * j + 1] = v;
        r1[2 * j] = v;
        r1[2 * j + 1] = v;
      }
    }
  }
  debug_check("avg_unpool2d", {&y}, out);
  if (should_record({&y})) record<AvgUnpoolNode>(out, {y});
  return out;
}

// ---------------------------------------------------------------------------
// Classification.

Tensor softmax(const Tensor& logits) {
  require_rank("softmax", logits, 2, "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor out = Tensor::uninitialized({n, k});
  auto src = logits.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = src.data() + i * k;
    double* s = dst.data() + i * k;
    const double mx = *std::max_element(z, z + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      s[j] = std::exp(z[j] - mx);
      total += s[j];
    }
    for (std::size_t j = 0; j < k; ++j) s[j] /= total;
  }
  debug_check("softmax", {&logits}, out);
  if (should_record({&logits})) record<SoftmaxNode>(out, {logits});
  return out;
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank("cross_entropy", logits, 2, "logits");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  auto z = logits.data();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k) {
      throw InputError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                       std::to_string(k) + ")");
    }
    const double* row = z.data() + i * k;
    const double mx = *std::max_element(row, row + k);
    double acc = 0.0;
    for (std::size_t j = 0; j < k; ++j) acc += std::exp(row[j] - mx);
    total += mx + std::log(acc) - row[labels[i]];
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(n));
  debug_check("cross_entropy", {&logits}, out);
  if (should_record({&logits})) {
    record<CrossEntropyNode>(out, {logits}, std::vector<int>(labels.begin(), labels.end()));
  }
  return out;
}

Tensor instance_norm(const Tensor& x, double eps) {
  require_rank("instance_norm", x, 4, "input");
  const PlaneStats st = plane_stats(x, eps);
  const std::size_t hw = x.dim(2) * x.dim(3);
  Tensor out = Tensor::uninitialized(x.shape());
  auto src = x.data();
  auto dst = out.mutable_data();
  for (std::size_t p = 0; p < st.mean.size(); ++p) {
    const double m = st.mean[p], r = st.inv_std[p];
    const double* in = src.data() + p * hw;
    double* o = dst.data() + p * hw;
    for (std::size_t i = 0; i < hw; ++i) o[i] = (in[i] - m) * r;
  }
  debug_check("instance_norm", {&x}, out);
  if (should_record({&x})) record<InstanceNormNode>(out, {x}, eps);
  return out;
}

Tensor instance_norm_backward(const Tensor& x, const Tensor& grad_out, double eps) {
  require_rank("instance_norm_backward", x, 4, "input");
  require_same_shape("instance_norm_backward", x, grad_out);
  const PlaneStats st = plane_stats(x, eps);
  const std::size_t hw = x.dim(2) * x.dim(3);
  const double inv_hw = 1.0 / static_cast<double>(hw);
  Tensor out = Tensor::uninitialized(x.shape());
  auto xs = x.data();
  auto gs = grad_out.data();
  auto dst = out.mutable_data();
  for (std::size_t p = 0; p < st.mean.size(); ++p) {
    const double* xv = xs.data() + p * hw;
    const double* gv = gs.data() + p * hw;
    double* ov = dst.data() + p * hw;
    const double m = st.mean[p], r = st.inv_std[p];
    double sg = 0.0, sgy = 0.0;
    for (std::size_t i = 0; i < hw; ++i) {
      sg += gv[i];
      sgy += gv[i] * (xv[i] - m) * r;
    }
    sg *= inv_hw;
    sgy *= inv_hw;
    for (std::size_t i = 0; i < hw; ++i) ov[i] = r * (gv[i] - sg - (xv[i] - m) * r * sgy);
  }
  debug_check("instance_norm_backward", {&x, &grad_out}, out);
  if (should_record({&x, &grad_out})) record<InstanceNormGradNode>(out, {x, grad_out}, eps);
  return out;
}

// ---------------------------------------------------------------------------
// Row gather / scatter.

Tensor concat(std::span<const Tensor> parts) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  for (const Tensor& p : parts) {
    Shape t(p.shape().begin() + 1, p.shape().end());
    if (t != tail) {
      throw DimensionError("concat: trailing extents differ, " + shape_str(parts[0].shape()) +
                           " vs " + shape_str(p.shape()));
    }
    rows += p.dim(0);
  }
  Shape shape = parts[0].shape();
  shape[0] = rows;
  Tensor out = Tensor::uninitialized(std::move(shape));
  double* dst = out.mutable_data().data();
  for (const Tensor& p : parts) dst = std::copy(p.data().begin(), p.data().end(), dst);
  if (should_record(parts)) {
    record<ConcatNode>(out, std::vector<Tensor>(parts.begin(), parts.end()));
  }
  return out;
}

Tensor index_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (rows.empty()) throw DimensionError("index_rows: empty index list");
  const std::size_t stride = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = rows.size();
  Tensor out = Tensor::uninitialized(std::move(shape));
  auto src = x.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.dim(0)) {
      throw DimensionError("index_rows: row " + std::to_string(rows[i]) + " out of range for " +
                           shape_str(x.shape()));
    }
    std::copy_n(src.data() + rows[i] * stride, stride, dst.data() + i * stride);
  }
  if (should_record({&x})) {
    record<IndexRowsNode>(out, {x}, std::vector<std::size_t>(rows.begin(), rows.end()));
  }
  return out;
}

Tensor scatter_rows(const Tensor& g, std::span<const std::size_t> rows, std::size_t num_rows) {
  if (g.dim(0) != rows.size()) {
    throw DimensionError("scatter_rows: " + std::to_string(rows.size()) + " indices for " +
                         shape_str(g.shape()));
  }
  const std::size_t stride = g.numel() / g.dim(0);
  Shape shape = g.shape();
  shape[0] = num_rows;
  Tensor out(std::move(shape));
  auto src = g.data();
  auto dst = out.mutable_data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= num_rows) throw DimensionError("scatter_rows: row index out of range");
    const double* in = src.data() + i * stride;
    double* o = dst.data() + rows[i] * stride;
    for (std::size_t j = 0; j < stride; ++j) o[j] += in[j];
  }
  if (should_record({&g})) {
    record<ScatterRowsNode>(out, {g}, std::vector<std::size_t>(rows.begin(), rows.end()));
  }
  return out;
}

}  // namespace ccm::ops
