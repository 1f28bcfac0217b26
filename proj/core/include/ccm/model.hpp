#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ccm/data.hpp"
#include "ccm/rng.hpp"
#include "ccm/tensor.hpp"

namespace ccm {

enum class InitScheme {
  /// U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)).
  uniform_fan_in,
  /// N(0, 2 / fan_in).
  normal_fan_in,
};

std::string to_string(InitScheme scheme);
InitScheme parse_init_scheme(const std::string& name);

/// Blocks of conv3x3 -> instance norm -> ReLU -> 2x2 average pool, followed
/// by a dense head.
struct ConvNetConfig {
  std::size_t input_channels = 1;
  std::size_t input_side = 28;
  std::size_t filters = 32;
  std::size_t num_blocks = 3;
  std::size_t num_classes = 10;
  InitScheme init = InitScheme::uniform_fan_in;

  /// Throws InputError for unusable configurations.
  void validate() const;
  /// Spatial side after all pooling stages (floor division).
  std::size_t feature_side() const;
  std::size_t feature_size() const;
  std::size_t parameter_count() const;
};

/// Network parameters.
///
/// Enumeration order, relied upon by serialisation and gradient matching:
/// kernel_0, bias_0, ..., kernel_{B-1}, bias_{B-1}, head_weight, head_bias.
/// Kernels are [3, 3, in, out], the head weight is [features, classes].
struct ModelParams {
  ConvNetConfig config;
  std::vector<Tensor> kernels;
  std::vector<Tensor> conv_biases;
  Tensor head_weight;
  Tensor head_bias;

  std::vector<Tensor> all() const;
  /// Weight tensors compared by gradient matching: kernels then head weight.
  std::vector<Tensor> matched() const;
  void set_requires_grad(bool on);
  ModelParams clone() const;
};

/// Biases start at zero; weights follow config.init. Deterministic in rng.
ModelParams init_params(const ConvNetConfig& config, Rng& rng);

/// Logits [N, num_classes] for a batch [N, C, H, W]. No softmax.
Tensor forward(const ModelParams& params, const Tensor& batch);

/// Mean softmax cross-entropy.
Tensor loss(const Tensor& logits, std::span<const int> labels);

/// Pushes the logits of classes outside `active` far below the rest, so they
/// neither win the argmax nor take probability mass.
Tensor mask_inactive_classes(const Tensor& logits, std::span<const int> active);

/// argmax(logits) == label rate; ties go to the lowest class index.
/// With a non-empty `active` set only those classes compete.
double accuracy(const ModelParams& params, const LabeledDataset& dataset,
                std::span<const int> active = {});
/// Fraction of rows of precomputed logits whose argmax equals the label.
double accuracy_from_logits(const Tensor& logits, std::span<const int> labels,
                            std::span<const int> active = {});

/// Flat binary blob: "CCMP", version u32, then each tensor in enumeration
/// order as rank u32, extents u32 x rank, f64 values.
void save_params(const ModelParams& params, const std::filesystem::path& path);
/// Loads a blob written by save_params and checks it against `config`.
ModelParams load_params(const std::filesystem::path& path, const ConvNetConfig& config);

}  // namespace ccm
