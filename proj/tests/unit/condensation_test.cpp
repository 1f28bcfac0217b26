#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "ccm/autograd.hpp"
#include "ccm/condensation.hpp"
#include "ccm/error.hpp"
#include "ccm/ops.hpp"
#include "ccm/optim.hpp"
#include "oracles.hpp"
#include "synthetic_data.hpp"

namespace ccm {
namespace {

using testing::numeric_gradient;
using testing::random_tensor;
using testing::relative_error;

ConvNetConfig tiny_config() {
  ConvNetConfig c;
  c.input_side = 8;
  c.filters = 4;
  c.num_blocks = 2;
  c.num_classes = 4;
  return c;
}

// Per-column oracle of the distance: sum over output nodes of 1 - cos.
double oracle_distance(const Tensor& a, const Tensor& b) {
  const std::size_t out = a.shape().back();
  const std::size_t rest = a.numel() / out;
  double total = 0.0;
  for (std::size_t o = 0; o < out; ++o) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t r = 0; r < rest; ++r) {
      const double x = a.data()[r * out + o], y = b.data()[r * out + o];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    na = std::sqrt(na);
    nb = std::sqrt(nb);
    if (na <= 1e-12 && nb <= 1e-12) continue;
    if (na <= 1e-12 || nb <= 1e-12) {
      total += 1.0;
      continue;
    }
    total += 1.0 - dot / (na * nb);
  }
  return total;
}

TEST(MatchConfig, DefaultsAndValidation) {
  const MatchConfig d;
  EXPECT_EQ(d.outer_iterations, 100u);
  EXPECT_EQ(d.inner_iterations, 10u);
  EXPECT_EQ(d.matching_iterations, 10u);
  EXPECT_EQ(d.model_iterations, 1u);
  EXPECT_EQ(d.condensation_lr, 0.1);
  EXPECT_EQ(d.training_lr, 0.01);
  EXPECT_EQ(d.condensation_batch, 256u);
  EXPECT_EQ(d.training_batch, 128u);
  MatchConfig c;
  c.inner_iterations = 0;
  try {
    c.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.key(), "inner_iterations");
  }
  c = MatchConfig{};
  c.model_iterations = 0;
  EXPECT_NO_THROW(c.validate());
  c.condensation_lr = -1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(LayerDistance, IdenticalScaledAndOrthogonal) {
  Rng rng(1);
  const Tensor a = random_tensor({3, 3, 2, 5}, rng);
  EXPECT_EQ(layer_distance(a, a).item(), 0.0);
  EXPECT_NEAR(layer_distance(a, ops::affine(a, 3.7)).item(), 0.0, 1e-12);
  // Column o of a is e_o, column o of b is e_{o+5}: every node orthogonal.
  Tensor x = Tensor::zeros({10, 5}), y = Tensor::zeros({10, 5});
  for (std::size_t o = 0; o < 5; ++o) {
    x.mutable_data()[o * 5 + o] = 1.0;
    y.mutable_data()[(o + 5) * 5 + o] = 2.0;
  }
  EXPECT_NEAR(layer_distance(x, y).item(), 5.0, 1e-15);
  EXPECT_NEAR(layer_distance(x, ops::neg(x)).item(), 10.0, 1e-12);
}

TEST(LayerDistance, ZeroNormNodes) {
  Tensor a = Tensor::zeros({4, 3}), b = Tensor::zeros({4, 3});
  EXPECT_EQ(layer_distance(a, b).item(), 0.0);
  a.mutable_data()[0] = 1.0;  // node 0 nonzero only in a
  EXPECT_DOUBLE_EQ(layer_distance(a, b).item(), 1.0);
  b.mutable_data()[1] = 1.0;  // node 1 nonzero only in b
  EXPECT_DOUBLE_EQ(layer_distance(a, b).item(), 2.0);
}

TEST(LayerDistance, MatchesPerNodeOracle) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_tensor({3, 3, 3, 4}, rng), b = random_tensor({3, 3, 3, 4}, rng);
    EXPECT_NEAR(layer_distance(a, b).item(), oracle_distance(a, b), 1e-12);
    const Tensor d = random_tensor({7, 3}, rng), e = random_tensor({7, 3}, rng);
    EXPECT_NEAR(layer_distance(d, e).item(), oracle_distance(d, e), 1e-12);
  }
}

TEST(LayerDistance, GroupsByLastAxis) {
  // Only node 1 differs in direction; the grouping must see exactly one term.
  Tensor a = Tensor::ones({6, 3}), b = Tensor::ones({6, 3});
  for (std::size_t r = 0; r < 6; ++r) b.mutable_data()[r * 3 + 1] = r % 2 ? 1.0 : -1.0;
  EXPECT_NEAR(layer_distance(a, b).item(), 1.0, 1e-15);
}

TEST(LayerDistance, ShapeMismatchIsContractError) {
  EXPECT_THROW(layer_distance(Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ContractError);
}

TEST(LayerDistance, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  Tensor a = random_tensor({3, 3, 2, 3}, rng), b = random_tensor({3, 3, 2, 3}, rng);
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  const std::vector<Tensor> leaves{a, b};
  const auto g = grad(layer_distance(a, b), leaves);
  const auto n = numeric_gradient([&] { return layer_distance(a, b).item(); }, leaves, 1e-6);
  EXPECT_LT(relative_error(g[0].data(), n[0]), 1e-6);
  EXPECT_LT(relative_error(g[1].data(), n[1]), 1e-6);
}

struct MatchFixture : ::testing::Test {
  Rng rng{7};
  ConvNetConfig config = tiny_config();
  ModelParams params;
  LabeledDataset data = testing::blob_dataset(4, 12, 8, rng);

  void SetUp() override {
    params = init_params(config, rng);
    params.set_requires_grad(true);
  }
  Batch real_batch(int label, std::size_t n) { return sample_class_batch(data, label, n, rng); }
};

TEST_F(MatchFixture, IdenticalBatchesGiveZero) {
  const Batch real = real_batch(1, 6);
  EXPECT_NEAR(gradient_match_loss(params, real, real.images, real.labels).item(), 0.0, 1e-12);
}

TEST_F(MatchFixture, LossWithinNodeBound) {
  const std::size_t nodes = 2 * config.filters + config.num_classes;
  for (int trial = 0; trial < 5; ++trial) {
    const Batch real = real_batch(2, 8);
    const Tensor syn = random_tensor({3, 1, 8, 8}, rng, 0.0, 1.0);
    const std::vector<int> labels(3, 2);
    const double l = gradient_match_loss(params, real, syn, labels).item();
    EXPECT_GE(l, 0.0);
    EXPECT_LE(l, 2.0 * static_cast<double>(nodes));
  }
}

TEST_F(MatchFixture, InvariantToRescalingRealGradients) {
  const Batch real = real_batch(0, 8);
  const auto real_grads = matched_gradients(params, real.images, real.labels);
  std::vector<Tensor> scaled;
  for (const Tensor& g : real_grads) scaled.push_back(ops::affine(g, 17.5));
  const Tensor syn = random_tensor({2, 1, 8, 8}, rng, 0.0, 1.0);
  const std::vector<int> labels(2, 0);
  EXPECT_NEAR(matching_distance(real_grads, params, syn, labels).item(),
              matching_distance(scaled, params, syn, labels).item(), 1e-12);
}

TEST_F(MatchFixture, MixedClassBatchRejectedInDebugMode) {
  const Batch a = real_batch(0, 3), b = real_batch(1, 3);
  const Batch mixed = concat_batches(a, b);
  const std::vector<int> labels(3, 0);
  set_debug_checks(true);
  EXPECT_THROW(gradient_match_loss(params, mixed, a.images, labels), ContractError);
  set_debug_checks(false);
}

TEST_F(MatchFixture, SecondOrderGradientsMatchFiniteDifferences) {
  const Batch real = real_batch(3, 6);
  ClassMemory composite = ClassMemory::composite(3, 2, 3, {1, 8, 8}, rng);
  ClassMemory plain = ClassMemory::synthetic(3, 3, {1, 8, 8}, rng);
  for (ClassMemory* m : {&composite, &plain}) {
    const std::vector<int> labels(m->num_images(), 3);
    const auto leaves = m->leaves();
    const auto g =
        grad(gradient_match_loss(params, real, m->images(), labels), leaves);
    const auto n = numeric_gradient(
        [&] { return gradient_match_loss(params, real, m->images(), labels).item(); }, leaves,
        1e-5);
    for (std::size_t i = 0; i < leaves.size(); ++i)
      EXPECT_LT(relative_error(g[i].data(), n[i]), 1e-3) << "leaf " << i;
  }
}

TEST_F(MatchFixture, CompositeWithIdentityWeightsReducesToPlainPixels) {
  // With W = I the composite images are sigmoid(c); the chain rule through the
  // sigmoid must be the only difference from optimising the pixels directly.
  const Batch real = real_batch(1, 6);
  const auto real_grads = matched_gradients(params, real.images, real.labels);
  Tensor c = random_tensor({3, 1, 8, 8}, rng, -1.0, 1.0);
  c.set_requires_grad(true);
  Tensor identity = Tensor::zeros({3, 3});
  for (std::size_t i = 0; i < 3; ++i) identity.mutable_data()[i * 4] = 1.0;
  const ClassComposite comp{1, c, identity};
  const std::vector<int> labels(3, 1);
  const std::vector<Tensor> cl{c};
  const auto gc = grad(matching_distance(real_grads, params, synthesize(comp), labels), cl);

  Tensor x = ops::sigmoid(c).detach();
  x.set_requires_grad(true);
  const std::vector<Tensor> xl{x};
  const Tensor dx = matching_distance(real_grads, params, x, labels);
  const auto gx = grad(dx, xl);
  EXPECT_NEAR(dx.item(), matching_distance(real_grads, params, synthesize(comp), labels).item(),
              1e-13);
  for (std::size_t i = 0; i < c.numel(); ++i) {
    const double s = x.data()[i];
    EXPECT_NEAR(gc[0].data()[i], gx[0].data()[i] * s * (1.0 - s), 1e-12);
  }
}

CondenseOptions tiny_options(MemoryKind kind) {
  CondenseOptions o;
  o.model = tiny_config();
  o.match.outer_iterations = 2;
  o.match.inner_iterations = 2;
  o.match.matching_iterations = 2;
  o.match.condensation_batch = 8;
  o.match.training_batch = 6;
  o.kind = kind;
  o.num_components = 2;
  o.num_images = 4;
  return o;
}

struct TaskFixture : ::testing::Test {
  Rng rng{11};
  LabeledDataset train = testing::blob_dataset(4, 10, 8, rng);
  LabeledDataset test = testing::blob_dataset(4, 4, 8, rng);
  TaskSequence tasks = split_tasks(train, test, 2);
};

TEST_F(TaskFixture, BufferGainsTaskClasses) {
  RehearsalBuffer buffer;
  Rng r(1);
  condense_task(tasks[0], buffer, tiny_options(MemoryKind::composite), r);
  EXPECT_EQ(buffer.labels(), (std::vector<int>{0, 1}));
  condense_task(tasks[1], buffer, tiny_options(MemoryKind::composite), r);
  EXPECT_EQ(buffer.labels(), (std::vector<int>{0, 1, 2, 3}));
  for (const auto& e : buffer.entries()) {
    ASSERT_TRUE(std::holds_alternative<ClassComposite>(e));
    EXPECT_EQ(std::get<ClassComposite>(e).num_components(), 2u);
    EXPECT_EQ(std::get<ClassComposite>(e).num_images(), 4u);
    EXPECT_FALSE(std::get<ClassComposite>(e).components.requires_grad());
  }
}

TEST_F(TaskFixture, ErrorsBeforeAnyWork) {
  RehearsalBuffer buffer;
  Rng r(1);
  condense_task(tasks[0], buffer, tiny_options(MemoryKind::synthetic), r);
  EXPECT_THROW(condense_task(tasks[0], buffer, tiny_options(MemoryKind::synthetic), r),
               ContractError);
  CondenseOptions o = tiny_options(MemoryKind::composite);
  o.num_components = 0;
  EXPECT_THROW(condense_task(tasks[1], buffer, o, r), BudgetError);
  o = tiny_options(MemoryKind::synthetic);
  o.num_images = 0;
  EXPECT_THROW(condense_task(tasks[1], buffer, o, r), BudgetError);
  EXPECT_EQ(buffer.num_classes(), 2u);
}

TEST_F(TaskFixture, SingleStepEquivalence) {
  CondenseOptions o = tiny_options(MemoryKind::composite);
  o.match.outer_iterations = 1;
  o.match.inner_iterations = 1;
  o.match.matching_iterations = 1;
  o.match.model_iterations = 0;
  const Task one{{2}, tasks[1].train.filter_classes(std::vector<int>{2}),
                 tasks[1].test.filter_classes(std::vector<int>{2})};
  RehearsalBuffer buffer;
  Rng r(5);
  condense_task(one, buffer, o, r);
  const auto& learned = std::get<ClassComposite>(buffer.entries()[0]);

  // Hand-driven: same draws in the same order, one SGD step on the distance.
  Rng hand = Rng(5).derive(2);
  ClassComposite m = init_composite(2, 2, 4, {1, 8, 8}, hand);
  ModelParams p = init_params(o.model, hand);
  p.set_requires_grad(true);
  const Batch real = sample_class_batch(one.train, 2, o.match.condensation_batch, hand);
  const auto real_grads = matched_gradients(p, real.images, real.labels);
  m.components.set_requires_grad(true);
  m.weights.set_requires_grad(true);
  const std::vector<int> labels(4, 2);
  std::vector<Tensor> leaves{m.components, m.weights};
  const auto g = grad(matching_distance(real_grads, p, synthesize(m), labels), leaves);
  const Tensor c0 = m.components.detach(), w0 = m.weights.detach();
  sgd_step(leaves, g, o.match.condensation_lr);

  for (std::size_t i = 0; i < c0.numel(); ++i) {
    EXPECT_DOUBLE_EQ(learned.components.data()[i], m.components.data()[i]);
    EXPECT_NEAR(m.components.data()[i], c0.data()[i] - 0.1 * g[0].data()[i], 1e-15);
  }
  for (std::size_t i = 0; i < w0.numel(); ++i)
    EXPECT_DOUBLE_EQ(learned.weights.data()[i], m.weights.data()[i]);
}

TEST_F(TaskFixture, ReproducibleForSeed) {
  for (MemoryKind kind : {MemoryKind::composite, MemoryKind::synthetic}) {
    RehearsalBuffer a, b;
    Rng ra(3), rb(3);
    condense_task(tasks[0], a, tiny_options(kind), ra);
    condense_task(tasks[0], b, tiny_options(kind), rb);
    const Batch x = a.all_examples(), y = b.all_examples();
    EXPECT_TRUE(std::equal(x.images.data().begin(), x.images.data().end(),
                           y.images.data().begin()));
  }
}

TEST_F(TaskFixture, ProgressSinkWritesOneLinePerMatchingStep) {
  std::ostringstream out;
  RehearsalBuffer buffer;
  Rng r(4);
  const CondenseOptions o = tiny_options(MemoryKind::composite);
  condense_task(tasks[0], buffer, o, r, csv_progress_sink(out));
  std::istringstream in(out.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "outer,inner,step,class,loss");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 2u * 2 * 2 * 2);
}

TEST_F(TaskFixture, MatchingReducesDistanceOnFixedModel) {
  // Many matching steps against a fixed model and batch must lower the loss.
  Rng r(8);
  ModelParams p = init_params(tiny_config(), r);
  p.set_requires_grad(true);
  const Batch real = sample_class_batch(train, 1, 10, r);
  const auto real_grads = matched_gradients(p, real.images, real.labels);
  ClassMemory m = ClassMemory::composite(1, 2, 4, {1, 8, 8}, r);
  const std::vector<int> labels(4, 1);
  auto leaves = m.leaves();
  const double before = matching_distance(real_grads, p, m.images(), labels).item();
  for (int s = 0; s < 50; ++s) {
    const auto g = grad(matching_distance(real_grads, p, m.images(), labels), leaves);
    sgd_step(leaves, g, 0.1);
  }
  EXPECT_LT(matching_distance(real_grads, p, m.images(), labels).item(), before);
}

}  // namespace
}  // namespace ccm
