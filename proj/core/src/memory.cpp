#include "ccm/memory.hpp"

#include <algorithm>
#include <cstdio>

#include "binary_io.hpp"
#include "ccm/autograd.hpp"
#include "ccm/error.hpp"
#include "ccm/ops.hpp"

namespace ccm {

namespace {

Shape trailing_shape(const Tensor& images) {
  return Shape(images.shape().begin() + 1, images.shape().end());
}

template <class... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <class... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

void check_images(const Tensor& images, const char* what) {
  if (!images.defined() || images.rank() != 4)
    throw DimensionError(std::string(what) + " images must be [Q, C, H, W]");
}

}  // namespace

Shape ClassComposite::image_shape() const { return trailing_shape(components); }

ClassComposite init_composite(int label, std::size_t num_components, std::size_t num_images,
                              const Shape& image_shape, Rng& rng) {
  if (num_components == 0 || num_images == 0)
    throw ContractError("composite needs at least one component and one image");
  if (image_shape.size() != 3) throw DimensionError("image shape must be {C, H, W}");
  Shape cshape{num_components};
  cshape.insert(cshape.end(), image_shape.begin(), image_shape.end());
  ClassComposite m{label, Tensor(cshape), Tensor({num_images, num_components})};
  for (auto& v : m.components.mutable_data()) v = rng.uniform(0.0, 1.0);
  for (auto& v : m.weights.mutable_data()) v = rng.normal();
  return m;
}

Tensor synthesize(const ClassComposite& memory) {
  if (memory.components.rank() != 4 || memory.weights.rank() != 2 ||
      memory.weights.dim(1) != memory.components.dim(0))
    throw DimensionError("composite weights " + shape_str(memory.weights.shape()) +
                         " do not match components " + shape_str(memory.components.shape()));
  const std::size_t p = memory.num_components();
  const std::size_t s = memory.components.numel() / p;
  Tensor flat = ops::reshape(memory.components, {p, s});
  Tensor mixed = ops::sigmoid(ops::matmul(memory.weights, flat));
  Shape out{memory.num_images()};
  const Shape img = memory.image_shape();
  out.insert(out.end(), img.begin(), img.end());
  return ops::reshape(mixed, out);
}

int entry_label(const MemoryEntry& entry) {
  return std::visit([](const auto& e) { return e.label; }, entry);
}

std::size_t entry_image_count(const MemoryEntry& entry) {
  return std::visit(Overloaded{[](const ClassComposite& c) { return c.num_images(); },
                               [](const auto& e) { return e.images.dim(0); }},
                    entry);
}

Tensor entry_images(const MemoryEntry& entry) {
  NoGradGuard no_grad;
  return std::visit(Overloaded{[](const ClassComposite& c) { return synthesize(c).detach(); },
                               [](const auto& e) { return e.images.detach(); }},
                    entry);
}

void RehearsalBuffer::add(MemoryEntry entry) {
  Shape shape = std::visit(
      Overloaded{[](const ClassComposite& c) {
                   if (c.components.rank() != 4 || c.weights.rank() != 2 ||
                       c.weights.dim(1) != c.components.dim(0))
                     throw DimensionError("malformed composite entry");
                   return c.image_shape();
                 },
                 [](const SyntheticImages& e) {
                   check_images(e.images, "synthetic");
                   return trailing_shape(e.images);
                 },
                 [](const StoredExamples& e) {
                   check_images(e.images, "stored");
                   return trailing_shape(e.images);
                 }},
      entry);
  const int label = entry_label(entry);
  if (has_class(label))
    throw ContractError("buffer already holds class " + std::to_string(label));
  if (!entries_.empty() && shape != image_shape_)
    throw DimensionError("entry image shape " + shape_str(shape) + " differs from buffer " +
                         shape_str(image_shape_));
  image_shape_ = shape;
  entries_.push_back(std::move(entry));
}

bool RehearsalBuffer::has_class(int label) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const MemoryEntry& e) { return entry_label(e) == label; });
}

std::vector<int> RehearsalBuffer::labels() const {
  std::vector<int> out;
  for (const auto& e : entries_) out.push_back(entry_label(e));
  return out;
}

std::size_t RehearsalBuffer::example_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += entry_image_count(e);
  return n;
}

Batch RehearsalBuffer::all_examples() const {
  if (entries_.empty()) throw ContractError("buffer is empty");
  std::vector<Tensor> parts;
  Batch batch;
  for (const auto& e : entries_) {
    parts.push_back(entry_images(e));
    batch.labels.insert(batch.labels.end(), entry_image_count(e), entry_label(e));
  }
  NoGradGuard no_grad;
  batch.images = parts.size() == 1 ? parts[0] : ops::concat(parts);
  return batch;
}

std::optional<Batch> RehearsalBuffer::minibatch(std::size_t batch_size, Rng& rng) const {
  if (entries_.empty() || batch_size == 0) return std::nullopt;
  Batch all = all_examples();
  const std::size_t n = all.size();
  if (batch_size >= n) return all;
  auto rows = rng.sample_without_replacement(n, batch_size);
  NoGradGuard no_grad;
  Batch out;
  out.images = ops::index_rows(all.images, rows);
  for (std::size_t r : rows) out.labels.push_back(all.labels[r]);
  return out;
}

StorageCost RehearsalBuffer::storage_cost() const {
  StorageCost cost;
  if (entries_.empty()) return cost;
  const std::size_t s = shape_numel(image_shape_);
  std::size_t mixing = 0;
  for (const auto& e : entries_) {
    if (const auto* c = std::get_if<ClassComposite>(&e)) {
      const std::size_t pq = c->num_components() * c->num_images();
      cost.real_numbers += c->num_components() * s + pq;
      mixing += pq;
    } else {
      cost.real_numbers += entry_image_count(e) * s;
    }
  }
  cost.examples_equivalent = static_cast<double>(cost.real_numbers) / static_cast<double>(s);
  cost.overhead_examples = static_cast<double>(mixing) / static_cast<double>(s);
  return cost;
}

std::size_t per_class_quota(std::size_t buffer_size, std::size_t num_classes) {
  if (num_classes == 0) throw BudgetError("no classes to share the buffer");
  const std::size_t q = buffer_size / num_classes;
  if (q < 1)
    throw BudgetError("buffer of " + std::to_string(buffer_size) + " cannot hold one example for each of " +
                      std::to_string(num_classes) + " classes");
  return q;
}

double composite_overhead(std::size_t buffer_size, std::size_t num_classes,
                          std::size_t sample_size, std::size_t images_per_component) {
  const std::size_t p = per_class_quota(buffer_size, num_classes);
  const std::size_t q = images_per_component * p;
  return static_cast<double>(num_classes * p * q) / static_cast<double>(sample_size);
}

std::string format_overhead(double overhead) {
  char buf[32];
  std::snprintf(buf, sizeof buf, overhead < 10.0 ? "%.2f" : "%.1f", overhead);
  // A value that rounds up to 10.00 is printed with one decimal as well.
  if (overhead < 10.0 && std::string(buf) == "10.00") std::snprintf(buf, sizeof buf, "%.1f", overhead);
  return buf;
}

namespace {
constexpr std::uint32_t kBufferVersion = 1;
enum : std::uint8_t { kTagComposite = 0, kTagSynthetic = 1, kTagStored = 2 };
}  // namespace

void save_buffer(const RehearsalBuffer& buffer, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic("CCMB");
  w.u32(kBufferVersion);
  const Shape shape = buffer.empty() ? Shape{0, 0, 0} : buffer.image_shape();
  for (std::size_t d : shape) w.u32(static_cast<std::uint32_t>(d));
  w.u32(static_cast<std::uint32_t>(buffer.num_classes()));
  for (const auto& e : buffer.entries()) {
    std::visit(Overloaded{[&](const ClassComposite& c) {
                            w.u8(kTagComposite);
                            w.i32(c.label);
                            w.u32(static_cast<std::uint32_t>(c.num_components()));
                            w.u32(static_cast<std::uint32_t>(c.num_images()));
                            w.tensor(c.components);
                            w.tensor(c.weights);
                          },
                          [&](const SyntheticImages& s) {
                            w.u8(kTagSynthetic);
                            w.i32(s.label);
                            w.u32(0);
                            w.u32(static_cast<std::uint32_t>(s.images.dim(0)));
                            w.tensor(s.images);
                          },
                          [&](const StoredExamples& s) {
                            w.u8(kTagStored);
                            w.i32(s.label);
                            w.u32(0);
                            w.u32(static_cast<std::uint32_t>(s.images.dim(0)));
                            w.tensor(s.images);
                          }},
               e);
  }
  io::write_file_atomic(path, w.bytes());
}

RehearsalBuffer load_buffer(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes, path.string());
  r.expect_magic("CCMB");
  if (const auto v = r.u32(); v != kBufferVersion)
    r.fail("unsupported buffer version " + std::to_string(v));
  Shape shape{r.u32(), r.u32(), r.u32()};
  const std::uint32_t count = r.u32();
  RehearsalBuffer buffer;
  auto expect = [&](const Tensor& t, const Shape& want, const char* what) {
    if (t.shape() != want)
      r.fail(std::string(what) + " has shape " + shape_str(t.shape()) + ", expected " +
             shape_str(want));
  };
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::size_t at = r.offset();
    const std::uint8_t tag = r.u8();
    const int label = r.i32();
    const std::size_t p = r.u32(), q = r.u32();
    Shape img{q, shape[0], shape[1], shape[2]};
    try {
      if (tag == kTagComposite) {
        ClassComposite c{label, r.tensor(), Tensor()};
        c.weights = r.tensor();
        expect(c.components, {p, shape[0], shape[1], shape[2]}, "components");
        expect(c.weights, {q, p}, "weights");
        buffer.add(std::move(c));
      } else if (tag == kTagSynthetic || tag == kTagStored) {
        Tensor images = r.tensor();
        expect(images, img, "images");
        if (tag == kTagSynthetic)
          buffer.add(SyntheticImages{label, std::move(images)});
        else
          buffer.add(StoredExamples{label, std::move(images)});
      } else {
        r.fail("unknown entry tag " + std::to_string(tag));
      }
    } catch (const ContractError& e) {
      throw FormatError(path.string() + ": entry at offset " + std::to_string(at) + ": " + e.what());
    }
  }
  if (r.remaining() != 0) r.fail("trailing bytes after last entry");
  return buffer;
}

}  // namespace ccm
