#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "ccm/autograd.hpp"
#include "ccm/error.hpp"
#include "ccm/memory.hpp"
#include "ccm/ops.hpp"
#include "oracles.hpp"

namespace ccm {
namespace {

using testing::brute_force_synthesis;
using testing::numeric_gradient;
using testing::random_tensor;
using testing::relative_error;

const Shape kMnist{1, 28, 28};

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ccm_memory_test_" + name);
}

RehearsalBuffer mixed_buffer(Rng& rng) {
  RehearsalBuffer b;
  b.add(init_composite(0, 2, 4, {1, 4, 4}, rng));
  b.add(SyntheticImages{1, random_tensor({3, 1, 4, 4}, rng, -0.5, 1.5)});
  b.add(StoredExamples{2, random_tensor({2, 1, 4, 4}, rng, 0.0, 1.0)});
  return b;
}

TEST(InitComposite, Distributions) {
  Rng rng(1);
  const ClassComposite m = init_composite(3, 40, 80, {1, 6, 6}, rng);
  EXPECT_EQ(m.label, 3);
  EXPECT_EQ(m.components.shape(), (Shape{40, 1, 6, 6}));
  EXPECT_EQ(m.weights.shape(), (Shape{80, 40}));
  for (double v : m.components.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  double mean = 0.0, sq = 0.0;
  for (double v : m.weights.data()) {
    mean += v;
    sq += v * v;
  }
  const double n = static_cast<double>(m.weights.numel());
  mean /= n;
  EXPECT_NEAR(mean, 0.0, 0.1);
  EXPECT_NEAR(sq / n - mean * mean, 1.0, 0.1);
}

TEST(InitComposite, DeterministicAndValidated) {
  Rng a(5), b(5);
  const ClassComposite x = init_composite(0, 3, 6, kMnist, a);
  const ClassComposite y = init_composite(0, 3, 6, kMnist, b);
  EXPECT_TRUE(std::equal(x.components.data().begin(), x.components.data().end(),
                         y.components.data().begin()));
  EXPECT_TRUE(std::equal(x.weights.data().begin(), x.weights.data().end(), y.weights.data().begin()));
  EXPECT_THROW(init_composite(0, 0, 2, kMnist, a), ContractError);
  EXPECT_THROW(init_composite(0, 2, 0, kMnist, a), ContractError);
}

TEST(Synthesize, ZeroWeightsGiveHalf) {
  Rng rng(2);
  ClassComposite m = init_composite(0, 3, 5, {1, 4, 4}, rng);
  m.weights = Tensor::zeros({5, 3});
  const Tensor x = synthesize(m);
  EXPECT_EQ(x.shape(), (Shape{5, 1, 4, 4}));
  for (double v : x.data()) EXPECT_EQ(v, 0.5);
}

TEST(Synthesize, SingleComponentUnitWeightIsSigmoid) {
  Rng rng(3);
  ClassComposite m{0, random_tensor({1, 3, 2, 2}, rng, -4.0, 4.0), Tensor::ones({1, 1})};
  const Tensor x = synthesize(m);
  for (std::size_t i = 0; i < 12; ++i)
    EXPECT_NEAR(x.data()[i], 1.0 / (1.0 + std::exp(-m.components.data()[i])), 1e-15);
}

TEST(Synthesize, MatchesBruteForceOracle) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t p = 1 + rng.index(8), q = 1 + rng.index(8);
    ClassComposite m{0, random_tensor({p, 1, 5, 5}, rng, -3.0, 3.0),
                     random_tensor({q, p}, rng, -2.0, 2.0)};
    const Tensor x = synthesize(m);
    const auto oracle = brute_force_synthesis(m.components, m.weights);
    for (std::size_t i = 0; i < oracle.size(); ++i) {
      EXPECT_NEAR(x.data()[i], oracle[i], 1e-12);
      EXPECT_GT(x.data()[i], 0.0);
      EXPECT_LT(x.data()[i], 1.0);
    }
  }
}

TEST(Synthesize, PixelGradientWrtWeightIsSigmoidSlopeTimesComponent) {
  Rng rng(6);
  ClassComposite m = init_composite(0, 3, 4, {1, 3, 3}, rng);
  m.components.set_requires_grad(true);
  m.weights.set_requires_grad(true);
  const std::size_t j = 2, pixel = 4;
  auto pick = [&] { return synthesize(m).data()[j * 9 + pixel]; };
  const Tensor x = synthesize(m);
  Tensor sel = Tensor::zeros(x.shape());
  sel.mutable_data()[j * 9 + pixel] = 1.0;
  const std::vector<Tensor> leaves{m.weights, m.components};
  const auto g = grad(ops::sum(ops::mul(x, sel)), leaves);
  const double s = x.data()[j * 9 + pixel];
  for (std::size_t i = 0; i < 3; ++i)
    EXPECT_NEAR(g[0].data()[j * 3 + i], s * (1 - s) * m.components.data()[i * 9 + pixel], 1e-14);
  const auto numeric = numeric_gradient(pick, leaves, 1e-6);
  EXPECT_LT(relative_error(g[0].data(), numeric[0]), 1e-6);
  EXPECT_LT(relative_error(g[1].data(), numeric[1]), 1e-6);
}

TEST(Quota, FloorDivisionAndBudgetError) {
  EXPECT_EQ(per_class_quota(100, 10), 10u);
  EXPECT_EQ(per_class_quota(25, 10), 2u);
  EXPECT_THROW(per_class_quota(9, 10), BudgetError);
  EXPECT_THROW(per_class_quota(10, 0), BudgetError);
}

TEST(StorageCost, PerEntryFormulas) {
  Rng rng(7);
  const RehearsalBuffer b = mixed_buffer(rng);
  const StorageCost c = b.storage_cost();
  const std::size_t s = 16;
  EXPECT_EQ(c.real_numbers, (2 * s + 2 * 4) + 3 * s + 2 * s);
  EXPECT_DOUBLE_EQ(c.examples_equivalent, static_cast<double>(c.real_numbers) / s);
  EXPECT_DOUBLE_EQ(c.overhead_examples, 8.0 / s);
  EXPECT_EQ(RehearsalBuffer().storage_cost().real_numbers, 0u);
}

TEST(StorageCost, MnistOverheadValues) {
  Rng rng(8);
  RehearsalBuffer small, large;
  for (int c = 0; c < 10; ++c) {
    small.add(init_composite(c, 2, 4, kMnist, rng));
    large.add(init_composite(c, 10, 20, kMnist, rng));
  }
  EXPECT_EQ(format_overhead(small.storage_cost().overhead_examples), "0.10");
  EXPECT_DOUBLE_EQ(small.storage_cost().overhead_examples, 80.0 / 784.0);
  EXPECT_EQ(format_overhead(large.storage_cost().overhead_examples), "2.55");
}

TEST(StorageCost, OverheadTableValues) {
  const std::vector<std::pair<std::size_t, std::string>> mnist{
      {20, "0.10"}, {40, "0.41"}, {60, "0.92"}, {80, "1.63"}, {100, "2.55"}};
  for (const auto& [b, s] : mnist) EXPECT_EQ(format_overhead(composite_overhead(b, 10, 784)), s);
  const std::vector<std::pair<std::size_t, std::string>> cifar{
      {100, "0.65"}, {200, "2.60"}, {300, "5.86"}, {400, "10.4"}, {500, "16.3"}};
  for (const auto& [b, s] : cifar) EXPECT_EQ(format_overhead(composite_overhead(b, 10, 3072)), s);
}

TEST(StorageCost, CompositeCostGrowsBySlopePInQ) {
  Rng rng(9);
  for (std::size_t p : {1, 3, 7}) {
    for (std::size_t q = 1; q < 12; ++q) {
      RehearsalBuffer a, b;
      a.add(init_composite(0, p, q, kMnist, rng));
      b.add(init_composite(0, p, q + 1, kMnist, rng));
      EXPECT_EQ(b.storage_cost().real_numbers - a.storage_cost().real_numbers, p);
    }
  }
}

TEST(RehearsalBuffer, RejectsDuplicatesAndShapeMismatch) {
  Rng rng(10);
  RehearsalBuffer b;
  b.add(init_composite(0, 1, 2, {1, 4, 4}, rng));
  EXPECT_THROW(b.add(StoredExamples{0, Tensor::zeros({1, 1, 4, 4})}), ContractError);
  EXPECT_THROW(b.add(StoredExamples{1, Tensor::zeros({1, 1, 5, 5})}), DimensionError);
  EXPECT_TRUE(b.has_class(0));
  EXPECT_FALSE(b.has_class(1));
  EXPECT_EQ(b.labels(), (std::vector<int>{0}));
}

TEST(RehearsalBuffer, MinibatchDrawsFromAllClasses) {
  Rng rng(11);
  RehearsalBuffer b;
  b.add(init_composite(0, 2, 4, {1, 4, 4}, rng));
  b.add(init_composite(1, 2, 4, {1, 4, 4}, rng));
  const auto batch = b.minibatch(8, rng);
  ASSERT_TRUE(batch);
  EXPECT_EQ(batch->size(), 8u);
  std::multiset<int> labels(batch->labels.begin(), batch->labels.end());
  EXPECT_EQ(labels.count(0), 4u);
  EXPECT_EQ(labels.count(1), 4u);
  for (double v : batch->images.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  EXPECT_FALSE(batch->images.requires_grad());
}

TEST(RehearsalBuffer, MinibatchCapsAtBufferSizeAndSkipsWhenEmpty) {
  Rng rng(12);
  const RehearsalBuffer b = mixed_buffer(rng);
  EXPECT_EQ(b.example_count(), 4u + 3u + 2u);
  EXPECT_EQ(b.minibatch(100, rng)->size(), 9u);
  EXPECT_EQ(b.minibatch(5, rng)->size(), 5u);
  EXPECT_FALSE(RehearsalBuffer().minibatch(4, rng).has_value());
}

TEST(RehearsalBuffer, MinibatchIsDetachedFromLearnableComposite) {
  Rng rng(13);
  ClassComposite m = init_composite(0, 2, 2, {1, 3, 3}, rng);
  m.components.set_requires_grad(true);
  m.weights.set_requires_grad(true);
  RehearsalBuffer b;
  b.add(m);
  EXPECT_FALSE(b.minibatch(2, rng)->images.requires_grad());
  EXPECT_FALSE(b.all_examples().images.requires_grad());
}

TEST(RehearsalBuffer, AllExamplesInInsertionOrder) {
  Rng rng(14);
  const RehearsalBuffer b = mixed_buffer(rng);
  const Batch all = b.all_examples();
  EXPECT_EQ(all.labels, (std::vector<int>{0, 0, 0, 0, 1, 1, 1, 2, 2}));
  EXPECT_THROW(RehearsalBuffer().all_examples(), ContractError);
}

TEST(Serialization, RoundTripPreservesEveryEntryKind) {
  Rng rng(15);
  const RehearsalBuffer b = mixed_buffer(rng);
  const auto path = temp_file("buffer.ccmb");
  save_buffer(b, path);
  const RehearsalBuffer c = load_buffer(path);
  ASSERT_EQ(c.num_classes(), 3u);
  EXPECT_TRUE(std::holds_alternative<ClassComposite>(c.entries()[0]));
  EXPECT_TRUE(std::holds_alternative<SyntheticImages>(c.entries()[1]));
  EXPECT_TRUE(std::holds_alternative<StoredExamples>(c.entries()[2]));
  const Batch x = b.all_examples(), y = c.all_examples();
  EXPECT_TRUE(std::equal(x.images.data().begin(), x.images.data().end(), y.images.data().begin()));
  EXPECT_EQ(x.labels, y.labels);
  EXPECT_EQ(b.storage_cost().real_numbers, c.storage_cost().real_numbers);
  std::filesystem::remove(path);
}

TEST(Serialization, CorruptFilesAreFormatErrors) {
  Rng rng(16);
  const auto path = temp_file("corrupt.ccmb");
  save_buffer(mixed_buffer(rng), path);
  const auto size = std::filesystem::file_size(path);
  {
    std::ofstream out(path, std::ios::binary | std::ios::app);
    out << 'x';
  }
  EXPECT_THROW(load_buffer(path), FormatError);
  std::filesystem::resize_file(path, size - 10);
  EXPECT_THROW(load_buffer(path), FormatError);
  {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "NOPE";
  }
  EXPECT_THROW(load_buffer(path), FormatError);
  std::filesystem::remove(path);
}

TEST(FormatOverhead, PrecisionSwitchesAtTen) {
  EXPECT_EQ(format_overhead(9.994), "9.99");
  EXPECT_EQ(format_overhead(10.4166), "10.4");
  EXPECT_EQ(format_overhead(0.0), "0.00");
}

}  // namespace
}  // namespace ccm
