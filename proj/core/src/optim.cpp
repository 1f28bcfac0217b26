#include "ccm/optim.hpp"

#include <cmath>

#include "ccm/error.hpp"

namespace ccm {

namespace {

void check_lr(double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw ContractError("sgd_step: learning rate must be finite and non-negative");
  }
}

void apply(Tensor& p, const Tensor& g, double lr) {
  if (!g.defined()) throw ContractError("sgd_step: parameter has no gradient");
  if (g.shape() != p.shape()) {
    throw DimensionError("sgd_step: gradient " + shape_str(g.shape()) + " for parameter " +
                         shape_str(p.shape()));
  }
  auto w = p.mutable_data();
  auto d = g.data();
  for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * d[i];
}

}  // namespace

void sgd_step(std::span<Tensor> params, double lr) {
  check_lr(lr);
  for (Tensor& p : params) {
    if (!p.grad().defined()) throw ContractError("sgd_step: parameter has no gradient");
  }
  for (Tensor& p : params) apply(p, p.grad(), lr);
}

void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, double lr) {
  check_lr(lr);
  if (params.size() != grads.size()) {
    throw ContractError("sgd_step: " + std::to_string(grads.size()) + " gradients for " +
                        std::to_string(params.size()) + " parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) apply(params[i], grads[i], lr);
}

void zero_grads(std::span<Tensor> params) {
  for (Tensor& p : params) p.zero_grad();
}

}  // namespace ccm
