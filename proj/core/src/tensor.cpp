#include "ccm/tensor.hpp"

#include <sstream>
#include <type_traits>
#include <utility>

#include "ccm/autograd.hpp"
#include "ccm/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace ccm {

namespace {

// Leaves elements default-initialised so that resize() does not zero-fill.
template <class T>
struct DefaultInitAllocator : std::allocator<T> {
  template <class U>
  struct rebind {
    using other = DefaultInitAllocator<U>;
  };
  using std::allocator<T>::allocator;
  template <class U>
  void construct(U* p) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(p)) U;
  }
  template <class U, class... Args>
  void construct(U* p, Args&&... args) {
    ::new (static_cast<void*>(p)) U(std::forward<Args>(args)...);
  }
};

}  // namespace

struct Tensor::Impl {
  Shape shape;
  std::vector<double, DefaultInitAllocator<double>> data;
  bool requires_grad = false;
  std::shared_ptr<Node> node;
  Tensor grad;
};

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

#if defined(__GLIBC__)
// Activation buffers of tens of megabytes are allocated and released many
// times per training step. By default glibc hands such blocks back to the
// kernel and every reuse pays for fresh page faults; keep them in the heap.
const bool kHeapTuned = [] {
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
  return true;
}();
#endif

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape) : impl_(std::make_shared<Impl>()) {
  validate_shape(shape);
  impl_->data.assign(shape_numel(shape), 0.0);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<Impl>()) {
  validate_shape(shape);
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " needs " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data.assign(values.begin(), values.end());
}

Tensor Tensor::uninitialized(Shape shape) {
  validate_shape(shape);
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->data.resize(shape_numel(shape));
  t.impl_->shape = std::move(shape);
  return t;
}

Tensor Tensor::zeros(Shape shape) { return Tensor(std::move(shape)); }

Tensor Tensor::ones(Shape shape) { return full(std::move(shape), 1.0); }

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

static void require_defined(const void* impl) {
  if (!impl) throw ContractError("operation on an undefined tensor");
}

const Shape& Tensor::shape() const {
  require_defined(impl_.get());
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  const Shape& s = shape();
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
  }
  return s[axis];
}

std::size_t Tensor::numel() const { return shape_numel(shape()); }

std::span<const double> Tensor::data() const {
  require_defined(impl_.get());
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  require_defined(impl_.get());
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() needs a single-element tensor, shape is " + shape_str(shape()));
  }
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  require_defined(impl_.get());
  if (impl_->node) throw ContractError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = on;
  return *this;
}

bool Tensor::is_leaf() const { return impl_ && !impl_->node; }

const Tensor& Tensor::grad() const {
  require_defined(impl_.get());
  return impl_->grad;
}

void Tensor::set_grad(Tensor g) {
  require_defined(impl_.get());
  if (g.defined() && g.shape() != impl_->shape) {
    throw DimensionError("grad shape " + shape_str(g.shape()) + " differs from value shape " +
                         shape_str(impl_->shape));
  }
  impl_->grad = std::move(g);
}

void Tensor::zero_grad() {
  require_defined(impl_.get());
  impl_->grad = Tensor();
}

Tensor Tensor::detach() const {
  require_defined(impl_.get());
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  return t;
}

const std::shared_ptr<Node>& Tensor::node() const {
  require_defined(impl_.get());
  return impl_->node;
}

void attach_node(Tensor& out, std::shared_ptr<Node> node) {
  out.impl_->node = std::move(node);
  out.impl_->requires_grad = true;
}

}  // namespace ccm
