#include "ccm/continual.hpp"

#include <algorithm>
#include <chrono>
#include <numeric>
#include <set>

#include "ccm/autograd.hpp"
#include "ccm/error.hpp"
#include "ccm/ops.hpp"
#include "ccm/optim.hpp"

namespace ccm {

namespace {

// Streams drawn from the run seed.
enum : std::uint64_t { kModelStream = 1, kTaskStream = 100 };

void train_steps(ModelParams& params, std::size_t iterations, double lr,
                 std::span<const int> active, const std::function<Batch()>& next_batch) {
  std::vector<Tensor> theta = params.all();
  for (std::size_t s = 0; s < iterations; ++s) {
    const Batch b = next_batch();
    const auto g = grad(batch_loss(params, b.images, b.labels, active), theta);
    sgd_step(theta, g, lr);
  }
}

}  // namespace

std::string to_string(StrategyKind kind) {
  switch (kind) {
    case StrategyKind::naive: return "naive";
    case StrategyKind::condensation: return "dc";
    case StrategyKind::composite: return "composite";
  }
  return "?";
}

StrategyKind parse_strategy(const std::string& name) {
  if (name == "naive") return StrategyKind::naive;
  if (name == "dc") return StrategyKind::condensation;
  if (name == "composite") return StrategyKind::composite;
  throw InputError("unknown strategy '" + name + "' (expected naive, dc or composite)");
}

std::string to_string(HeadMode mode) { return mode == HeadMode::fixed ? "fixed" : "expanding"; }

HeadMode parse_head_mode(const std::string& name) {
  if (name == "fixed") return HeadMode::fixed;
  if (name == "expanding") return HeadMode::expanding;
  throw InputError("unknown head mode '" + name + "' (expected fixed or expanding)");
}

MemoryShape memory_shape(const Strategy& strategy, std::size_t num_classes) {
  if (strategy.kind == StrategyKind::naive && strategy.buffer_size == 0) return {};
  const std::size_t quota = per_class_quota(strategy.buffer_size, num_classes);
  if (strategy.kind != StrategyKind::composite) return {0, quota};
  MemoryShape m;
  m.components = strategy.components ? strategy.components : quota;
  m.images = strategy.images ? strategy.images : strategy.images_per_component * m.components;
  if (m.images == 0) throw BudgetError("composite memory needs at least one image per class");
  return m;
}

std::vector<StoredExamples> select_naive_examples(const Task& task, std::size_t per_class_quota,
                                                  Rng& rng) {
  if (per_class_quota == 0) throw BudgetError("per-class quota is zero");
  std::vector<StoredExamples> out;
  for (int c : task.classes) {
    const auto& rows = task.train.indices_of(c);
    if (rows.size() < per_class_quota)
      throw InputError("class " + std::to_string(c) + " has " + std::to_string(rows.size()) +
                       " examples, fewer than the quota " + std::to_string(per_class_quota));
    std::vector<std::size_t> pick;
    for (std::size_t i : rng.sample_without_replacement(rows.size(), per_class_quota))
      pick.push_back(rows[i]);
    out.push_back({c, task.train.subset(pick).images()});
  }
  return out;
}

std::vector<double> evaluate_all(const ModelParams& params, std::span<const Task> tasks,
                                 std::span<const int> active) {
  std::vector<double> acc;
  for (const Task& t : tasks) acc.push_back(accuracy(params, t.test, active));
  return acc;
}

RunResult run_sequence(std::span<const Task> tasks, const Strategy& strategy,
                       const RunOptions& options, std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  if (tasks.empty()) throw InputError("empty task sequence");
  options.model.validate();
  options.match.validate();
  std::set<int> all_classes;
  for (const Task& t : tasks) {
    if (t.classes.empty()) throw InputError("task without classes");
    all_classes.insert(t.classes.begin(), t.classes.end());
  }
  if (all_classes.size() > options.model.num_classes || *all_classes.begin() < 0 ||
      *all_classes.rbegin() >= static_cast<int>(options.model.num_classes))
    throw InputError("task labels do not fit a head of " +
                     std::to_string(options.model.num_classes) + " classes");

  RunResult result;
  result.seed = seed;
  result.memory = memory_shape(strategy, all_classes.size());
  const Rng root(seed);
  Rng model_rng = root.derive(kModelStream);
  ModelParams params = init_params(options.model, model_rng);
  params.set_requires_grad(true);

  RehearsalBuffer buffer;
  std::vector<int> seen;
  const std::size_t bt = options.match.training_batch;
  const double lr = options.match.training_lr;

  for (std::size_t ti = 0; ti < tasks.size(); ++ti) {
    const Task& task = tasks[ti];
    Rng rng = root.derive(kTaskStream + ti);
    seen.insert(seen.end(), task.classes.begin(), task.classes.end());
    std::sort(seen.begin(), seen.end());
    const std::vector<int> active =
        options.head == HeadMode::expanding ? seen : std::vector<int>{};

    if (strategy.kind == StrategyKind::naive) {
      if (result.memory.images > 0)
        for (auto& e : select_naive_examples(task, result.memory.images, rng)) buffer.add(std::move(e));
      train_steps(params, options.train_iterations, lr, active, [&] {
        if (buffer.empty()) return sample_batch(task.train, std::min(bt, task.train.size()), rng);
        const std::size_t half = std::min(bt / 2, buffer.example_count());
        Batch old = *buffer.minibatch(half, rng);
        Batch fresh = sample_batch(task.train, std::min(old.size(), task.train.size()), rng);
        return concat_batches(fresh, old);
      });
    } else {
      params = init_params(options.model, rng);
      params.set_requires_grad(true);
      CondenseOptions co;
      co.model = options.model;
      co.match = options.match;
      co.kind = strategy.kind == StrategyKind::composite ? MemoryKind::composite
                                                         : MemoryKind::synthetic;
      co.num_components = result.memory.components;
      co.num_images = result.memory.images;
      co.active_classes = active;
      condense_task(task, buffer, co, rng, options.progress);
      train_steps(params, options.train_iterations, lr, active,
                  [&] { return *buffer.minibatch(bt, rng); });
    }

    result.accuracy_matrix.push_back(evaluate_all(params, tasks.subspan(0, ti + 1), active));
    result.storage_history.push_back(buffer.storage_cost());
  }

  result.final_accuracies = result.accuracy_matrix.back();
  result.average_accuracy =
      std::accumulate(result.final_accuracies.begin(), result.final_accuracies.end(), 0.0) /
      static_cast<double>(result.final_accuracies.size());
  result.storage = buffer.storage_cost();
  result.buffer = std::move(buffer);
  result.wall_clock_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace ccm
