#pragma once

#include <span>

#include "ccm/tensor.hpp"

namespace ccm {

/// Plain SGD: param <- param - lr * grad, in place and outside the graph.
/// Every parameter must carry a gradient; grads are left as they are.
void sgd_step(std::span<Tensor> params, double lr);

/// Same update with externally computed gradients (parallel to `params`).
void sgd_step(std::span<Tensor> params, std::span<const Tensor> grads, double lr);

void zero_grads(std::span<Tensor> params);

}  // namespace ccm
