#include <benchmark/benchmark.h>

#include <vector>

#include "ccm/autograd.hpp"
#include "ccm/condensation.hpp"
#include "ccm/model.hpp"
#include "ccm/ops.hpp"
#include "ccm/rng.hpp"

namespace {

ccm::Tensor random_images(std::size_t n, std::size_t side, ccm::Rng& rng) {
  ccm::Tensor t({n, 1, side, side});
  for (auto& v : t.mutable_data()) v = rng.uniform();
  return t;
}

ccm::ConvNetConfig desk_model(std::size_t filters) {
  ccm::ConvNetConfig c;
  c.filters = filters;
  return c;
}

void BM_Conv2dForward(benchmark::State& state) {
  ccm::Rng rng(1);
  const auto filters = static_cast<std::size_t>(state.range(0));
  ccm::Tensor x({64, filters, 14, 14});
  ccm::Tensor k({3, 3, filters, filters});
  for (auto& v : x.mutable_data()) v = rng.uniform();
  for (auto& v : k.mutable_data()) v = rng.uniform(-0.1, 0.1);
  ccm::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(ccm::ops::conv2d(x, k));
  state.SetItemsProcessed(state.iterations() * 64 * 14 * 14 * 9 * filters * filters);
}
BENCHMARK(BM_Conv2dForward)->Arg(32)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_ForwardBackward(benchmark::State& state) {
  ccm::Rng rng(2);
  const auto batch = static_cast<std::size_t>(state.range(0));
  auto params = ccm::init_params(desk_model(32), rng);
  params.set_requires_grad(true);
  const auto images = random_images(batch, 28, rng);
  std::vector<int> labels(batch, 3);
  const auto theta = params.all();
  for (auto _ : state) {
    auto g = ccm::grad(ccm::batch_loss(params, images, labels), theta);
    benchmark::DoNotOptimize(g);
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(batch));
}
BENCHMARK(BM_ForwardBackward)->Arg(128)->Arg(256)->Unit(benchmark::kMillisecond);

// One matching step: synthetic gradients with a recorded graph, the layer
// distances and their gradient w.r.t. the composite.
void BM_MatchingStep(benchmark::State& state) {
  ccm::Rng rng(3);
  const auto p = static_cast<std::size_t>(state.range(0));
  auto params = ccm::init_params(desk_model(32), rng);
  params.set_requires_grad(true);
  const auto real = random_images(256, 28, rng);
  const std::vector<int> real_labels(256, 1);
  const auto real_grads = ccm::matched_gradients(params, real, real_labels);
  auto memory = ccm::ClassMemory::composite(1, p, 2 * p, {1, 28, 28}, rng);
  const std::vector<int> syn_labels(2 * p, 1);
  const auto leaves = memory.leaves();
  for (auto _ : state) {
    auto d = ccm::matching_distance(real_grads, params, memory.images(), syn_labels);
    auto g = ccm::grad(d, leaves);
    benchmark::DoNotOptimize(g);
  }
}
BENCHMARK(BM_MatchingStep)->Arg(2)->Arg(10)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
