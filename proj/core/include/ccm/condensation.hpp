#pragma once

#include <cstddef>
#include <functional>
#include <ostream>
#include <span>
#include <variant>
#include <vector>

#include "ccm/data.hpp"
#include "ccm/memory.hpp"
#include "ccm/model.hpp"
#include "ccm/rng.hpp"
#include "ccm/tensor.hpp"

namespace ccm {

struct MatchConfig {
  std::size_t outer_iterations = 100;   // K
  std::size_t inner_iterations = 10;   // T
  std::size_t matching_iterations = 10; // I
  std::size_t model_iterations = 1;     // J, may be 0
  double condensation_lr = 0.1;
  double training_lr = 0.01;
  std::size_t condensation_batch = 256;
  std::size_t training_batch = 128;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
};

/// Per-output-node cosine dissimilarity of two weight gradients.
///
/// The output-unit axis is the last one ([3, 3, in, out] kernels, [in, out]
/// dense weights). Returns sum_i (1 - cos(A_i, B_i)); a node where both
/// norms are at most 1e-12 contributes 0, one where exactly one is
/// contributes 1. Differentiable in both arguments.
Tensor layer_distance(const Tensor& grad_real, const Tensor& grad_syn);

/// Cross-entropy of the network on a batch, restricted to `active` classes
/// when that set is non-empty.
Tensor batch_loss(const ModelParams& params, const Tensor& images, std::span<const int> labels,
                  std::span<const int> active = {});

/// Gradients of the batch loss w.r.t. the matched weights, as constants.
std::vector<Tensor> matched_gradients(const ModelParams& params, const Tensor& images,
                                      std::span<const int> labels,
                                      std::span<const int> active = {});

/// Sum of layer distances between fixed real gradients and the gradients of
/// the synthetic batch, which stay differentiable w.r.t. its sources.
Tensor matching_distance(std::span<const Tensor> real_grads, const ModelParams& params,
                         const Tensor& syn_images, std::span<const int> syn_labels,
                         std::span<const int> active = {});

/// Real and synthetic batches must each hold a single class.
Tensor gradient_match_loss(const ModelParams& params, const Batch& real, const Tensor& syn_images,
                           std::span<const int> syn_labels, std::span<const int> active = {});

enum class MemoryKind { composite, synthetic };

/// Learnable rehearsal memory of one class while it is being condensed.
class ClassMemory {
 public:
  /// Components ~ U[0, 1], weights ~ N(0, 1).
  static ClassMemory composite(int label, std::size_t num_components, std::size_t num_images,
                               const Shape& image_shape, Rng& rng);
  /// Pixels ~ U[0, 1]; updates are not clipped.
  static ClassMemory synthetic(int label, std::size_t num_images, const Shape& image_shape,
                               Rng& rng);

  int label() const;
  MemoryKind kind() const;
  std::size_t num_images() const;
  /// Differentiable [Q, C, H, W] images.
  Tensor images() const;
  /// Learnable tensors: {components, weights} or {images}.
  std::vector<Tensor> leaves() const;
  /// Detached snapshot for the rehearsal buffer.
  MemoryEntry to_entry() const;

 private:
  explicit ClassMemory(std::variant<ClassComposite, SyntheticImages> m) : memory_(std::move(m)) {}
  std::variant<ClassComposite, SyntheticImages> memory_;
};

struct MatchProgress {
  std::size_t outer = 0;
  std::size_t inner = 0;
  std::size_t step = 0;
  int class_label = 0;
  double loss = 0.0;
};

using ProgressSink = std::function<void(const MatchProgress&)>;

/// Writes "outer,inner,step,class,loss" lines (header first) to `out`.
ProgressSink csv_progress_sink(std::ostream& out);

struct CondenseOptions {
  ConvNetConfig model;
  MatchConfig match;
  MemoryKind kind = MemoryKind::composite;
  /// P; ignored for synthetic memories.
  std::size_t num_components = 1;
  /// Q.
  std::size_t num_images = 2;
  /// Classes competing in the loss; empty means the whole head.
  std::vector<int> active_classes;
};

/// Condenses one class against `data` starting from `memory`. The model is
/// reinitialised every outer iteration and persists across inner ones; each
/// inner iteration matches gradients `I` times and then trains the model
/// `J` times on the real batch joined with a rehearsal batch from `buffer`.
void condense_class(ClassMemory& memory, const LabeledDataset& data, const RehearsalBuffer& buffer,
                    const CondenseOptions& options, Rng& rng, const ProgressSink& sink = {});

/// Condenses every class of the task independently and appends the
/// memories to `buffer` once all are done. Throws ContractError when a task
/// class is already buffered and BudgetError for an empty quota.
void condense_task(const Task& task, RehearsalBuffer& buffer, const CondenseOptions& options,
                   Rng& rng, const ProgressSink& sink = {});

}  // namespace ccm
