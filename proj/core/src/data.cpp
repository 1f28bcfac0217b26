#include "ccm/data.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <set>

#include "binary_io.hpp"
#include "ccm/error.hpp"
#include "ccm/ops.hpp"

namespace ccm {

namespace {

constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
constexpr std::uint32_t kRawCacheVersion = 1;
constexpr std::size_t kCifarRecord = 1 + 3 * 32 * 32;

// Reads a whole file, inflating it if it is gzip-compressed.
std::vector<std::uint8_t> read_maybe_gzip(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  std::vector<std::uint8_t> bytes;
  std::array<std::uint8_t, 1 << 16> chunk;
  for (;;) {
    const int n = gzread(f, chunk.data(), static_cast<unsigned>(chunk.size()));
    if (n < 0) {
      int err = 0;
      std::string msg = gzerror(f, &err);
      gzclose(f);
      throw FormatError(path.string() + ": decompression failed (" + msg + ") at offset " +
                        std::to_string(bytes.size()));
    }
    if (n == 0) break;
    bytes.insert(bytes.end(), chunk.begin(), chunk.begin() + n);
  }
  gzclose(f);
  return bytes;
}

Tensor gather(const Tensor& images, std::span<const std::size_t> rows) {
  return ops::index_rows(images, rows);
}

}  // namespace

LabeledDataset::LabeledDataset(Tensor images, std::vector<int> labels)
    : images_(std::move(images)), labels_(std::move(labels)) {
  if (!images_.defined() || images_.rank() != 4) {
    throw InputError("dataset images must be a rank-4 [N, C, H, W] tensor");
  }
  if (labels_.empty() || images_.dim(0) != labels_.size()) {
    throw InputError("dataset has " + std::to_string(images_.dim(0)) + " images and " +
                     std::to_string(labels_.size()) + " labels");
  }
  for (double v : images_.data()) {
    if (!(v >= 0.0 && v <= 1.0)) throw InputError("dataset pixel outside [0, 1]");
  }
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (labels_[i] < 0) throw InputError("negative label " + std::to_string(labels_[i]));
    by_class_[labels_[i]].push_back(i);
  }
  for (const auto& [label, rows] : by_class_) class_set_.push_back(label);
}

Shape LabeledDataset::image_shape() const {
  return {images_.dim(1), images_.dim(2), images_.dim(3)};
}

const std::vector<std::size_t>& LabeledDataset::indices_of(int label) const {
  auto it = by_class_.find(label);
  if (it == by_class_.end()) {
    throw InputError("class " + std::to_string(label) + " not present in dataset");
  }
  return it->second;
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> rows) const {
  if (rows.empty()) throw InputError("subset would leave the dataset empty");
  std::vector<int> labels;
  labels.reserve(rows.size());
  for (std::size_t r : rows) {
    if (r >= size()) throw InputError("subset row " + std::to_string(r) + " out of range");
    labels.push_back(labels_[r]);
  }
  return LabeledDataset(gather(images_, rows), std::move(labels));
}

LabeledDataset LabeledDataset::filter_classes(std::span<const int> classes) const {
  std::set<int> keep(classes.begin(), classes.end());
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < size(); ++i) {
    if (keep.count(labels_[i])) rows.push_back(i);
  }
  if (rows.empty()) throw InputError("no examples of the requested classes");
  return subset(rows);
}

LabeledDataset LabeledDataset::limit_per_class(std::size_t max_per_class) const {
  if (max_per_class == 0) return *this;
  std::vector<std::size_t> rows;
  std::map<int, std::size_t> taken;
  for (std::size_t i = 0; i < size(); ++i) {
    if (taken[labels_[i]]++ < max_per_class) rows.push_back(i);
  }
  return subset(rows);
}

Batch concat_batches(const Batch& a, const Batch& b) {
  if (a.size() == 0) return b;
  if (b.size() == 0) return a;
  const std::array<Tensor, 2> parts{a.images, b.images};
  Batch out{ops::concat(parts).detach(), a.labels};
  out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
  return out;
}

LabeledDataset load_idx(const std::filesystem::path& images_path,
                        const std::filesystem::path& labels_path) {
  const auto image_bytes = read_maybe_gzip(images_path);
  io::ByteReader images(image_bytes, images_path.string());
  if (images.u32_be() != kIdxImagesMagic) {
    throw FormatError(images_path.string() + ": bad IDX image magic at offset 0");
  }
  const std::size_t n = images.u32_be();
  const std::size_t rows = images.u32_be();
  const std::size_t cols = images.u32_be();
  if (n == 0 || rows == 0 || cols == 0) images.fail("zero IDX dimension");
  const std::size_t pixels = n * rows * cols;
  const std::uint8_t* raw = images.take(pixels);

  const auto label_bytes = read_maybe_gzip(labels_path);
  io::ByteReader labels(label_bytes, labels_path.string());
  if (labels.u32_be() != kIdxLabelsMagic) {
    throw FormatError(labels_path.string() + ": bad IDX label magic at offset 0");
  }
  const std::size_t label_count = labels.u32_be();
  if (label_count != n) {
    throw FormatError(labels_path.string() + ": label count " + std::to_string(label_count) +
                      " does not match image count " + std::to_string(n) + " (offset 4)");
  }
  const std::uint8_t* raw_labels = labels.take(n);

  std::vector<double> values(pixels);
  for (std::size_t i = 0; i < pixels; ++i) values[i] = raw[i] / 255.0;
  std::vector<int> out_labels(raw_labels, raw_labels + n);
  return LabeledDataset(Tensor({n, 1, rows, cols}, std::move(values)), std::move(out_labels));
}

LabeledDataset load_cifar10_binary(std::span<const std::filesystem::path> batch_paths) {
  if (batch_paths.empty()) throw InputError("load_cifar10_binary: no batch files given");
  std::vector<double> values;
  std::vector<int> labels;
  for (const auto& path : batch_paths) {
    const auto bytes = io::read_file(path);
    if (bytes.empty() || bytes.size() % kCifarRecord != 0) {
      throw FormatError(path.string() + ": length " + std::to_string(bytes.size()) +
                        " is not a multiple of " + std::to_string(kCifarRecord) + " (offset " +
                        std::to_string(bytes.size() - bytes.size() % kCifarRecord) + ")");
    }
    for (std::size_t off = 0; off < bytes.size(); off += kCifarRecord) {
      labels.push_back(bytes[off]);
      for (std::size_t i = 1; i < kCifarRecord; ++i) values.push_back(bytes[off + i] / 255.0);
    }
  }
  const std::size_t n = labels.size();
  return LabeledDataset(Tensor({n, 3, 32, 32}, std::move(values)), std::move(labels));
}

void save_raw_cache(const LabeledDataset& dataset, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic("CCMD");
  w.u32(kRawCacheVersion);
  for (std::size_t d : dataset.images().shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : dataset.images().data()) w.f64(v);
  for (int label : dataset.labels()) {
    if (label > 255) throw InputError("raw cache stores labels as u8, got " + std::to_string(label));
    w.u8(static_cast<std::uint8_t>(label));
  }
  io::write_file_atomic(path, w.bytes());
}

LabeledDataset load_raw_cache(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes, path.string());
  r.expect_magic("CCMD");
  const std::uint32_t version = r.u32();
  if (version != kRawCacheVersion) r.fail("unsupported raw cache version " + std::to_string(version));
  Shape shape(4);
  for (auto& d : shape) {
    d = r.u32();
    if (d == 0) r.fail("zero extent");
  }
  const std::size_t count = shape_numel(shape);
  if (r.remaining() / sizeof(double) < count) r.fail("truncated pixel payload");
  std::vector<double> values(count);
  for (auto& v : values) v = r.f64();
  const std::uint8_t* raw = r.take(shape[0]);
  std::vector<int> labels(raw, raw + shape[0]);
  if (r.remaining() != 0) r.fail("trailing bytes");
  return LabeledDataset(Tensor(std::move(shape), std::move(values)), std::move(labels));
}

TaskSequence split_tasks(const LabeledDataset& train, const LabeledDataset& test,
                         std::size_t classes_per_task) {
  std::set<int> all(train.class_set().begin(), train.class_set().end());
  all.insert(test.class_set().begin(), test.class_set().end());
  const std::vector<int> classes(all.begin(), all.end());
  if (classes_per_task == 0 || classes.size() % classes_per_task != 0) {
    throw InputError("classes_per_task " + std::to_string(classes_per_task) + " does not divide " +
                     std::to_string(classes.size()) + " classes");
  }
  TaskSequence tasks;
  for (std::size_t start = 0; start < classes.size(); start += classes_per_task) {
    std::vector<int> group(classes.begin() + static_cast<std::ptrdiff_t>(start),
                           classes.begin() + static_cast<std::ptrdiff_t>(start + classes_per_task));
    tasks.push_back(Task{group, train.filter_classes(group), test.filter_classes(group)});
  }
  return tasks;
}

Batch sample_class_batch(const LabeledDataset& dataset, int class_label, std::size_t batch_size,
                         Rng& rng) {
  if (batch_size == 0) throw InputError("sample_class_batch: batch size must be positive");
  const auto& pool = dataset.indices_of(class_label);
  std::vector<std::size_t> rows(batch_size);
  if (batch_size <= pool.size()) {
    const auto picks = rng.sample_without_replacement(pool.size(), batch_size);
    for (std::size_t i = 0; i < batch_size; ++i) rows[i] = pool[picks[i]];
  } else {
    for (auto& r : rows) r = pool[rng.index(pool.size())];
  }
  return Batch{gather(dataset.images(), rows), std::vector<int>(batch_size, class_label)};
}

Batch sample_batch(const LabeledDataset& dataset, std::size_t batch_size, Rng& rng) {
  const std::size_t n = std::min(batch_size, dataset.size());
  if (n == 0) throw InputError("sample_batch: batch size must be positive");
  const auto rows = rng.sample_without_replacement(dataset.size(), n);
  std::vector<int> labels;
  labels.reserve(n);
  for (std::size_t r : rows) labels.push_back(dataset.labels()[r]);
  return Batch{gather(dataset.images(), rows), std::move(labels)};
}

}  // namespace ccm
