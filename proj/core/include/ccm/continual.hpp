#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ccm/condensation.hpp"
#include "ccm/data.hpp"
#include "ccm/memory.hpp"
#include "ccm/model.hpp"
#include "ccm/rng.hpp"

namespace ccm {

enum class StrategyKind {
  /// Randomly chosen real examples, mixed half and half with new-task data.
  naive,
  /// Plain synthetic images learned by gradient matching.
  condensation,
  /// Composite memories learned by gradient matching.
  composite,
};

/// "naive", "dc", "composite".
std::string to_string(StrategyKind kind);
/// Accepts the names above; throws InputError otherwise.
StrategyKind parse_strategy(const std::string& name);

struct Strategy {
  StrategyKind kind = StrategyKind::composite;
  /// Total stored images (naive, condensation) or components (composite),
  /// shared equally by every class of the sequence.
  std::size_t buffer_size = 100;
  /// Composite only: P per class; 0 takes the per-class quota.
  std::size_t components = 0;
  /// Composite only: Q per class; 0 means images_per_component * P.
  std::size_t images = 0;
  std::size_t images_per_component = 2;
};

/// Per-class P and Q a strategy uses for a sequence with `num_classes`
/// classes. Throws BudgetError when the quota is below one (a naive buffer
/// of size 0 is allowed and yields zero).
struct MemoryShape {
  std::size_t components = 0;
  std::size_t images = 0;
};
MemoryShape memory_shape(const Strategy& strategy, std::size_t num_classes);

enum class HeadMode {
  /// All logits compete from the first task on.
  fixed,
  /// Only classes seen so far compete, in training and evaluation.
  expanding,
};

std::string to_string(HeadMode mode);
HeadMode parse_head_mode(const std::string& name);

struct RunOptions {
  ConvNetConfig model;
  MatchConfig match;
  /// S: SGD iterations on rehearsal data after each task.
  std::size_t train_iterations = 500;
  HeadMode head = HeadMode::fixed;
  /// Matching progress of condensation strategies.
  ProgressSink progress;
};

struct RunResult {
  std::uint64_t seed = 0;
  /// Accuracy on every task's test set after the final task.
  std::vector<double> final_accuracies;
  double average_accuracy = 0.0;
  /// Row t: accuracies on tasks 0..t after training on task t.
  std::vector<std::vector<double>> accuracy_matrix;
  /// Buffer cost after each task.
  std::vector<StorageCost> storage_history;
  StorageCost storage;
  MemoryShape memory;
  /// Rehearsal memory after the final task.
  RehearsalBuffer buffer;
  double wall_clock_s = 0.0;
};

/// Uniform draw without replacement of `per_class_quota` examples of every
/// task class. Throws InputError when a class is smaller than the quota.
std::vector<StoredExamples> select_naive_examples(const Task& task, std::size_t per_class_quota,
                                                  Rng& rng);

/// Accuracy on each task's full test set. With a non-empty `active` set,
/// only those classes compete.
std::vector<double> evaluate_all(const ModelParams& params, std::span<const Task> tasks,
                                 std::span<const int> active = {});

/// Runs the strategy over the task sequence from a fixed seed.
RunResult run_sequence(std::span<const Task> tasks, const Strategy& strategy,
                       const RunOptions& options, std::uint64_t seed);

}  // namespace ccm
