#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <span>
#include <vector>

#include "ccm/rng.hpp"
#include "ccm/tensor.hpp"

namespace ccm {

/// Images with integer labels. Images are [N, C, H, W] with pixels in [0, 1].
class LabeledDataset {
 public:
  /// Validates the invariants (N > 0, labels >= 0, pixels in [0, 1]).
  LabeledDataset(Tensor images, std::vector<int> labels);

  std::size_t size() const { return labels_.size(); }
  const Tensor& images() const { return images_; }
  const std::vector<int>& labels() const { return labels_; }
  /// Sorted distinct labels.
  const std::vector<int>& class_set() const { return class_set_; }
  /// {C, H, W}.
  Shape image_shape() const;
  bool has_class(int label) const { return by_class_.count(label) > 0; }
  /// Row indices carrying `label`, ascending. Throws InputError if absent.
  const std::vector<std::size_t>& indices_of(int label) const;

  LabeledDataset subset(std::span<const std::size_t> rows) const;
  /// Rows whose label is in `classes`, in original order.
  LabeledDataset filter_classes(std::span<const int> classes) const;
  /// Keeps the first `max_per_class` rows of every class (0 keeps all).
  LabeledDataset limit_per_class(std::size_t max_per_class) const;

 private:
  Tensor images_;
  std::vector<int> labels_;
  std::vector<int> class_set_;
  std::map<int, std::vector<std::size_t>> by_class_;
};

/// A labelled minibatch; images have no graph history.
struct Batch {
  Tensor images;
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

Batch concat_batches(const Batch& a, const Batch& b);

/// IDX image (magic 0x803) and label (magic 0x801) files. Gzip-compressed
/// files are detected and inflated transparently.
LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path);

/// CIFAR-10 binary batches: records of 1 label byte + 3072 channel-planar
/// RGB bytes.
LabeledDataset load_cifar10_binary(std::span<const std::filesystem::path> batch_paths);

/// Raw cache: "CCMD", version u32, N C H W u32, f64 pixels, N u8 labels.
void save_raw_cache(const LabeledDataset& dataset, const std::filesystem::path& path);
LabeledDataset load_raw_cache(const std::filesystem::path& path);

struct Task {
  std::vector<int> classes;
  LabeledDataset train;
  LabeledDataset test;
};

using TaskSequence = std::vector<Task>;

/// Consecutive groups of `classes_per_task` classes in ascending label order.
TaskSequence split_tasks(const LabeledDataset& train, const LabeledDataset& test,
                         std::size_t classes_per_task);

/// `batch_size` examples of one class, drawn without replacement when the
/// class is large enough and with replacement otherwise.
Batch sample_class_batch(const LabeledDataset& dataset, int class_label, std::size_t batch_size,
                         Rng& rng);

/// Uniform draw without replacement over the whole dataset.
Batch sample_batch(const LabeledDataset& dataset, std::size_t batch_size, Rng& rng);

}  // namespace ccm
