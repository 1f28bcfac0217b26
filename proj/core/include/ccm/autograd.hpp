#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include "ccm/tensor.hpp"

namespace ccm {

/// One recorded operation. Inputs are held by value so that the backward
/// rule can read them.
class Node {
 public:
  explicit Node(std::vector<Tensor> inputs) : inputs_(std::move(inputs)) {}
  virtual ~Node() = default;
  Node(const Node&) = delete;
  Node& operator=(const Node&) = delete;

  virtual std::string_view name() const = 0;

  /// Gradients w.r.t. each input given the gradient of the output. Entries
  /// whose `wanted` flag is false may be left undefined. Backward rules are
  /// written with differentiable ops, so running them while grad mode is on
  /// records a graph of the backward pass itself (double backward).
  virtual std::vector<Tensor> backward(const Tensor& grad_output,
                                       const std::vector<bool>& wanted) = 0;

  const std::vector<Tensor>& inputs() const { return inputs_; }

 private:
  std::vector<Tensor> inputs_;
};

bool grad_mode_enabled();

/// Disables graph recording for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

/// When on, every op rejects non-finite inputs and outputs with NumericError.
void set_debug_checks(bool on);
bool debug_checks_enabled();

/// True when an op applied to `inputs` must record a node.
bool should_record(std::initializer_list<const Tensor*> inputs);
bool should_record(std::span<const Tensor> inputs);

/// Accumulates d(output)/d(leaf) into the grad of every differentiable leaf
/// reachable from `output`, which must hold exactly one element.
void backward(const Tensor& output, bool create_graph = false);

/// Returns d(output)/d(input) for each requested tensor without touching the
/// stored grads. Inputs the output does not depend on get zeros. With
/// `create_graph` the returned gradients are themselves graph nodes.
std::vector<Tensor> grad(const Tensor& output, std::span<const Tensor> inputs,
                         bool create_graph = false);

/// Differentiates a scalar built from first-order gradients.
///
/// Computes g = d(objective)/d(first_order_wrt) with a recorded backward
/// pass, forms s = build(g) and returns ds/d(leaves). A builder result that
/// does not depend on the leaves yields zeros.
std::vector<Tensor> grad_of_grad(
    const Tensor& objective, std::span<const Tensor> first_order_wrt,
    const std::function<Tensor(const std::vector<Tensor>&)>& build,
    std::span<const Tensor> leaves);

}  // namespace ccm
