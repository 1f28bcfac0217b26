// Randomized finite-difference checks for every differentiable op, first
// order and through a recorded backward pass.

#include <gtest/gtest.h>

#include "op_cases.hpp"

namespace ccm {
namespace {

using testing::draw;
using testing::numeric_gradient;
using testing::OpCase;
using testing::random_tensor;
using testing::relative_error;

class GradCheck : public ::testing::TestWithParam<OpCase> {};

TEST_P(GradCheck, InputsAreTiny) {
  for (const auto& s : GetParam().shapes) EXPECT_LE(shape_numel(s), 64u);
}

TEST_P(GradCheck, FirstOrderMatchesFiniteDifferences) {
  for (std::uint64_t trial = 0; trial < 3; ++trial)
    EXPECT_LT(testing::first_order_error(GetParam(), 1000 + trial), 1e-6) << "trial " << trial;
}

TEST_P(GradCheck, SecondOrderMatchesFiniteDifferencesOfFirstOrder) {
  EXPECT_LT(testing::second_order_error(GetParam(), 77), 1e-3);
}

INSTANTIATE_TEST_SUITE_P(AllOps, GradCheck, ::testing::ValuesIn(testing::all_op_cases()),
                         [](const ::testing::TestParamInfo<OpCase>& info) {
                           return info.param.name;
                         });

// A small composition exercising nodes shared between branches.
TEST(GradCheckComposite, ConvBlockDoubleBackward) {
  Rng rng(5);
  Tensor x = draw({2, 1, 4, 4}, rng, true).set_requires_grad();
  Tensor k = draw({3, 3, 1, 2}, rng, false).set_requires_grad();
  Tensor b = draw({2}, rng, false).set_requires_grad();
  Tensor w = draw({8, 3}, rng, false).set_requires_grad();
  const int labels[] = {1, 2};
  auto objective = [&] {
    Tensor h = ops::avg_pool2d(ops::relu(ops::instance_norm(ops::add_channel_bias(ops::conv2d(x, k), b))));
    return ops::cross_entropy(ops::matmul(ops::reshape(h, {2, 8}), w), labels);
  };
  const std::vector<Tensor> params = {k, w};
  Tensor tk = random_tensor(k.shape(), rng), tw = random_tensor(w.shape(), rng);
  auto build = [&](const std::vector<Tensor>& g) {
    return ops::add(ops::sum(ops::mul(g[0], tk)), ops::sum(ops::mul(g[1], tw)));
  };
  const Tensor pixels[] = {x};
  auto analytic = grad_of_grad(objective(), params, build, pixels);
  auto numeric = numeric_gradient(
      [&] {
        GradModeGuard on(true);
        return build(grad(objective(), params)).item();
      },
      {x}, 1e-5);
  EXPECT_LT(relative_error(analytic[0].data(), numeric[0]), 1e-3);
}

}  // namespace
}  // namespace ccm
