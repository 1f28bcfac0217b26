#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ccm {

/// Extents of a dense row-major tensor. Every extent is positive.
using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Node;

/// Dense float64 tensor with optional participation in a reverse-mode
/// autodiff graph.
///
/// A Tensor is a cheap handle; copies alias the same storage. Values produced
/// by operations are immutable by convention. Only leaves (parameters,
/// memories) are updated in place, and only outside of graph recording.
class Tensor {
 public:
  /// An undefined tensor: no storage, used for "no gradient".
  Tensor() = default;

  /// Zero-filled tensor of the given shape.
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  /// Storage with unspecified contents, for callers that overwrite every
  /// element.
  static Tensor uninitialized(Shape shape);
  static Tensor zeros(Shape shape);
  static Tensor ones(Shape shape);
  static Tensor full(Shape shape, double value);
  /// Shape {1}.
  static Tensor scalar(double value);
  static Tensor vector(std::initializer_list<double> values);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double at(std::size_t flat_index) const { return data()[flat_index]; }
  /// Value of a single-element tensor.
  double item() const;

  bool requires_grad() const;
  /// Marks a leaf as differentiable. Throws ContractError on non-leaves.
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const;

  /// Accumulated gradient; undefined until a backward pass reaches this leaf.
  const Tensor& grad() const;
  void set_grad(Tensor g);
  void zero_grad();

  /// Copy of the values with no graph history and requires_grad = false.
  Tensor detach() const;

  const std::shared_ptr<Node>& node() const;
  const void* id() const noexcept { return impl_.get(); }

 private:
  struct Impl;
  std::shared_ptr<Impl> impl_;

  friend void attach_node(Tensor& out, std::shared_ptr<Node> node);
};

/// Records `node` as the producer of `out` and marks `out` differentiable.
void attach_node(Tensor& out, std::shared_ptr<Node> node);

}  // namespace ccm
