#include "ccm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "binary_io.hpp"
#include "ccm/autograd.hpp"
#include "ccm/error.hpp"
#include "ccm/ops.hpp"

namespace ccm {

namespace {

constexpr std::uint32_t kParamsVersion = 1;
constexpr double kInstanceNormEps = 1e-5;
constexpr double kMaskedLogitOffset = -1e4;
constexpr std::size_t kEvalChunk = 500;

Tensor init_weight(Shape shape, std::size_t fan_in, InitScheme scheme, Rng& rng) {
  Tensor t(std::move(shape));
  auto d = t.mutable_data();
  if (scheme == InitScheme::uniform_fan_in) {
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : d) v = rng.uniform(-bound, bound);
  } else {
    const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : d) v = sd * rng.normal();
  }
  return t;
}

std::size_t argmax_row(const double* row, std::size_t k, std::span<const int> active) {
  if (active.empty()) return static_cast<std::size_t>(std::max_element(row, row + k) - row);
  std::size_t best = k;
  for (std::size_t j = 0; j < k; ++j) {
    if (std::find(active.begin(), active.end(), static_cast<int>(j)) == active.end()) continue;
    if (best == k || row[j] > row[best]) best = j;
  }
  return best;
}

}  // namespace

std::string to_string(InitScheme scheme) {
  return scheme == InitScheme::uniform_fan_in ? "uniform_fan_in" : "normal_fan_in";
}

InitScheme parse_init_scheme(const std::string& name) {
  if (name == "uniform_fan_in") return InitScheme::uniform_fan_in;
  if (name == "normal_fan_in") return InitScheme::normal_fan_in;
  throw InputError("unknown init scheme '" + name + "'");
}

void ConvNetConfig::validate() const {
  if (input_channels == 0 || filters == 0 || num_blocks == 0 || num_classes == 0) {
    throw InputError("ConvNetConfig: channels, filters, blocks and classes must be positive");
  }
  if (input_channels != 1 && input_channels != 3) {
    throw InputError("ConvNetConfig: input_channels must be 1 or 3, got " +
                     std::to_string(input_channels));
  }
  if (num_blocks >= 32 || (input_side >> num_blocks) == 0) {
    throw InputError("ConvNetConfig: input side " + std::to_string(input_side) +
                     " is too small for " + std::to_string(num_blocks) + " pooling stages");
  }
}

std::size_t ConvNetConfig::feature_side() const { return input_side >> num_blocks; }

std::size_t ConvNetConfig::feature_size() const {
  return filters * feature_side() * feature_side();
}

std::size_t ConvNetConfig::parameter_count() const {
  std::size_t count = 0;
  std::size_t in = input_channels;
  for (std::size_t b = 0; b < num_blocks; ++b) {
    count += 9 * in * filters + filters;
    in = filters;
  }
  return count + feature_size() * num_classes + num_classes;
}

std::vector<Tensor> ModelParams::all() const {
  std::vector<Tensor> out;
  for (std::size_t b = 0; b < kernels.size(); ++b) {
    out.push_back(kernels[b]);
    out.push_back(conv_biases[b]);
  }
  out.push_back(head_weight);
  out.push_back(head_bias);
  return out;
}

std::vector<Tensor> ModelParams::matched() const {
  std::vector<Tensor> out(kernels.begin(), kernels.end());
  out.push_back(head_weight);
  return out;
}

void ModelParams::set_requires_grad(bool on) {
  for (Tensor t : all()) t.set_requires_grad(on);
}

ModelParams ModelParams::clone() const {
  ModelParams p;
  p.config = config;
  for (const Tensor& k : kernels) p.kernels.push_back(k.detach());
  for (const Tensor& b : conv_biases) p.conv_biases.push_back(b.detach());
  p.head_weight = head_weight.detach();
  p.head_bias = head_bias.detach();
  return p;
}

ModelParams init_params(const ConvNetConfig& config, Rng& rng) {
  config.validate();
  ModelParams p;
  p.config = config;
  std::size_t in = config.input_channels;
  for (std::size_t b = 0; b < config.num_blocks; ++b) {
    p.kernels.push_back(init_weight({3, 3, in, config.filters}, 9 * in, config.init, rng));
    p.conv_biases.push_back(Tensor::zeros({config.filters}));
    in = config.filters;
  }
  p.head_weight = init_weight({config.feature_size(), config.num_classes}, config.feature_size(),
                              config.init, rng);
  p.head_bias = Tensor::zeros({config.num_classes});
  return p;
}

Tensor forward(const ModelParams& params, const Tensor& batch) {
  const ConvNetConfig& c = params.config;
  if (batch.rank() != 4 || batch.dim(1) != c.input_channels || batch.dim(2) != c.input_side ||
      batch.dim(3) != c.input_side) {
    throw DimensionError("forward: batch " + shape_str(batch.shape()) + " does not match [N, " +
                         std::to_string(c.input_channels) + ", " + std::to_string(c.input_side) +
                         ", " + std::to_string(c.input_side) + "]");
  }
  Tensor h = batch;
  for (std::size_t b = 0; b < params.kernels.size(); ++b) {
    h = ops::conv2d(h, params.kernels[b]);
    h = ops::add_channel_bias(h, params.conv_biases[b]);
    h = ops::instance_norm(h, kInstanceNormEps);
    h = ops::relu(h);
    h = ops::avg_pool2d(h);
  }
  const std::size_t n = batch.dim(0);
  h = ops::reshape(h, {n, c.feature_size()});
  return ops::add(ops::matmul(h, params.head_weight), ops::broadcast_rows(params.head_bias, n));
}

Tensor loss(const Tensor& logits, std::span<const int> labels) {
  return ops::cross_entropy(logits, labels);
}

Tensor mask_inactive_classes(const Tensor& logits, std::span<const int> active) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  Tensor mask({n, k});
  auto m = mask.mutable_data();
  for (std::size_t j = 0; j < k; ++j) {
    if (std::find(active.begin(), active.end(), static_cast<int>(j)) != active.end()) continue;
    for (std::size_t i = 0; i < n; ++i) m[i * k + j] = kMaskedLogitOffset;
  }
  return ops::add(logits, mask);
}

double accuracy_from_logits(const Tensor& logits, std::span<const int> labels,
                            std::span<const int> active) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw DimensionError("accuracy: label count differs from logits rows");
  if (n == 0) throw InputError("accuracy of an empty set");
  std::size_t correct = 0;
  auto z = logits.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (argmax_row(z.data() + i * k, k, active) == static_cast<std::size_t>(labels[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

double accuracy(const ModelParams& params, const LabeledDataset& dataset,
                std::span<const int> active) {
  NoGradGuard no_grad;
  std::size_t correct = 0;
  const std::size_t n = dataset.size();
  for (std::size_t start = 0; start < n; start += kEvalChunk) {
    const std::size_t end = std::min(n, start + kEvalChunk);
    std::vector<std::size_t> rows(end - start);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = start + i;
    Tensor logits = forward(params, ops::index_rows(dataset.images(), rows));
    std::span<const int> labels(dataset.labels().data() + start, rows.size());
    const double acc = accuracy_from_logits(logits, labels, active);
    correct += static_cast<std::size_t>(std::llround(acc * static_cast<double>(rows.size())));
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

void save_params(const ModelParams& params, const std::filesystem::path& path) {
  io::ByteWriter w;
  w.magic("CCMP");
  w.u32(kParamsVersion);
  for (const Tensor& t : params.all()) w.tensor(t);
  io::write_file_atomic(path, w.bytes());
}

ModelParams load_params(const std::filesystem::path& path, const ConvNetConfig& config) {
  config.validate();
  const auto bytes = io::read_file(path);
  io::ByteReader r(bytes, path.string());
  r.expect_magic("CCMP");
  const std::uint32_t version = r.u32();
  if (version != kParamsVersion) r.fail("unsupported parameter blob version " + std::to_string(version));

  Rng unused(0);
  ModelParams expected = init_params(config, unused);
  std::vector<Tensor> loaded;
  for (const Tensor& e : expected.all()) {
    Tensor t = r.tensor();
    if (t.shape() != e.shape()) {
      r.fail("tensor " + shape_str(t.shape()) + " where " + shape_str(e.shape()) + " was expected");
    }
    loaded.push_back(std::move(t));
  }
  if (r.remaining() != 0) r.fail("trailing bytes after parameter tensors");

  ModelParams p;
  p.config = config;
  for (std::size_t b = 0; b < config.num_blocks; ++b) {
    p.kernels.push_back(loaded[2 * b]);
    p.conv_biases.push_back(loaded[2 * b + 1]);
  }
  p.head_weight = loaded[2 * config.num_blocks];
  p.head_bias = loaded[2 * config.num_blocks + 1];
  return p;
}

}  // namespace ccm
