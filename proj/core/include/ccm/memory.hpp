#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ccm/data.hpp"
#include "ccm/rng.hpp"
#include "ccm/tensor.hpp"

namespace ccm {

/// Learned memory of one class: P components in pre-sigmoid space and a
/// [Q, P] mixing matrix. Image j is sigmoid(sum_i weights[j, i] * components[i]).
struct ClassComposite {
  int label = 0;
  Tensor components;  // [P, C, H, W]
  Tensor weights;     // [Q, P]

  std::size_t num_components() const { return components.dim(0); }
  std::size_t num_images() const { return weights.dim(0); }
  /// {C, H, W}.
  Shape image_shape() const;
};

/// Components ~ U[0, 1], weights ~ N(0, 1). `image_shape` is {C, H, W}.
ClassComposite init_composite(int label, std::size_t num_components, std::size_t num_images,
                              const Shape& image_shape, Rng& rng);

/// Differentiable [Q, C, H, W] images of a composite.
Tensor synthesize(const ClassComposite& memory);

/// Q free images of one class, stored directly in pixel space.
struct SyntheticImages {
  int label = 0;
  Tensor images;  // [Q, C, H, W]
};

/// Q training examples of one class kept verbatim.
struct StoredExamples {
  int label = 0;
  Tensor images;  // [Q, C, H, W]
};

using MemoryEntry = std::variant<ClassComposite, SyntheticImages, StoredExamples>;

int entry_label(const MemoryEntry& entry);
/// Number of rehearsal images the entry yields.
std::size_t entry_image_count(const MemoryEntry& entry);
/// Rehearsal images of the entry, detached from any graph.
Tensor entry_images(const MemoryEntry& entry);

struct StorageCost {
  std::size_t real_numbers = 0;
  /// real_numbers / S.
  double examples_equivalent = 0.0;
  /// Mixing weights of all composites / S.
  double overhead_examples = 0.0;
};

/// Rehearsal memory holding at most one entry per class.
class RehearsalBuffer {
 public:
  RehearsalBuffer() = default;

  /// Throws ContractError for a duplicate label and DimensionError when the
  /// image shape differs from earlier entries.
  void add(MemoryEntry entry);

  bool empty() const { return entries_.empty(); }
  std::size_t num_classes() const { return entries_.size(); }
  const std::vector<MemoryEntry>& entries() const { return entries_; }
  bool has_class(int label) const;
  std::vector<int> labels() const;
  std::size_t example_count() const;
  /// {C, H, W} shared by all entries; empty before the first add.
  const Shape& image_shape() const { return image_shape_; }

  /// Every rehearsal example, entries in insertion order.
  Batch all_examples() const;

  /// min(batch_size, example_count()) distinct examples drawn uniformly.
  /// Returns nullopt for an empty buffer, meaning rehearsal is skipped.
  std::optional<Batch> minibatch(std::size_t batch_size, Rng& rng) const;

  StorageCost storage_cost() const;

 private:
  std::vector<MemoryEntry> entries_;
  Shape image_shape_;
};

/// Components (or images) per class for a total budget shared equally by
/// `num_classes`. Throws BudgetError below one per class.
std::size_t per_class_quota(std::size_t buffer_size, std::size_t num_classes);

/// Mixing-weight overhead in examples for `num_classes` composites of P
/// components and Q = images_per_component * P images over inputs of
/// `sample_size` reals.
double composite_overhead(std::size_t buffer_size, std::size_t num_classes,
                          std::size_t sample_size, std::size_t images_per_component = 2);

/// Two decimals below 10, one decimal from 10 on.
std::string format_overhead(double overhead);

/// "CCMB", version u32, image shape, entry count, then per entry a tag
/// (0 composite, 1 synthetic, 2 stored), label, P, Q and f64 tensors.
void save_buffer(const RehearsalBuffer& buffer, const std::filesystem::path& path);
RehearsalBuffer load_buffer(const std::filesystem::path& path);

}  // namespace ccm
