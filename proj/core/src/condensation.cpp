#include "ccm/condensation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>

#include "ccm/autograd.hpp"
#include "ccm/error.hpp"
#include "ccm/ops.hpp"
#include "ccm/optim.hpp"

namespace ccm {

namespace {

constexpr double kZeroNorm = 1e-12;

// Positions of the matched weights within ModelParams::all().
std::vector<std::size_t> matched_positions(const ModelParams& params) {
  const auto all = params.all();
  std::vector<std::size_t> pos;
  for (const Tensor& m : params.matched()) {
    const auto it = std::find_if(all.begin(), all.end(), [&](const Tensor& t) { return t.id() == m.id(); });
    pos.push_back(static_cast<std::size_t>(it - all.begin()));
  }
  return pos;
}

bool single_class(std::span<const int> labels) {
  return std::adjacent_find(labels.begin(), labels.end(), std::not_equal_to<>()) == labels.end();
}

}  // namespace

void MatchConfig::validate() const {
  auto positive = [](std::size_t v, const char* key) {
    if (v == 0) throw ConfigError(key, std::string(key) + " must be positive");
  };
  positive(outer_iterations, "outer_iterations");
  positive(inner_iterations, "inner_iterations");
  positive(matching_iterations, "matching_iterations");
  positive(condensation_batch, "condensation_batch");
  positive(training_batch, "training_batch");
  if (!(condensation_lr > 0.0) || !std::isfinite(condensation_lr))
    throw ConfigError("condensation_lr", "condensation_lr must be positive and finite");
  if (!(training_lr > 0.0) || !std::isfinite(training_lr))
    throw ConfigError("training_lr", "training_lr must be positive and finite");
}

Tensor layer_distance(const Tensor& grad_real, const Tensor& grad_syn) {
  if (grad_real.shape() != grad_syn.shape())
    throw ContractError("layer_distance: shapes " + shape_str(grad_real.shape()) + " and " +
                        shape_str(grad_syn.shape()) + " differ");
  const std::size_t out = grad_real.shape().back();
  const std::size_t rest = grad_real.numel() / out;
  Tensor a = ops::reshape(grad_real, {rest, out});
  Tensor b = ops::reshape(grad_syn, {rest, out});
  Tensor dot = ops::sum_rows(ops::mul(a, b));
  Tensor na2 = ops::sum_rows(ops::mul(a, a));
  Tensor nb2 = ops::sum_rows(ops::mul(b, b));

  // Degenerate nodes are resolved from values alone; their cosine term is
  // masked out and the denominator kept away from zero.
  Tensor valid({out}), invalid({out});
  double one_sided = 0.0;
  for (std::size_t i = 0; i < out; ++i) {
    const bool za = std::sqrt(na2.at(i)) <= kZeroNorm;
    const bool zb = std::sqrt(nb2.at(i)) <= kZeroNorm;
    const bool ok = !za && !zb;
    valid.mutable_data()[i] = ok ? 1.0 : 0.0;
    invalid.mutable_data()[i] = ok ? 0.0 : 1.0;
    one_sided += za != zb ? 1.0 : 0.0;
  }
  // dot / sqrt(na2 * nb2) is exactly 1 for identical columns.
  Tensor norms = ops::pow_scalar(ops::add(ops::mul(na2, nb2), invalid), 0.5);
  Tensor cosine = ops::div(ops::mul(dot, valid), norms);
  // Rounding can push |cos| one ulp past 1. Both ends are extrema of 1 - cos,
  // so clamping there leaves the gradient unchanged.
  Tensor term = ops::relu(ops::affine(cosine, -1.0, 1.0));
  term = ops::affine(ops::relu(ops::affine(term, -1.0, 2.0)), -1.0, 2.0);
  return ops::affine(ops::sum(ops::mul(term, valid)), 1.0, one_sided);
}

Tensor batch_loss(const ModelParams& params, const Tensor& images, std::span<const int> labels,
                  std::span<const int> active) {
  Tensor logits = forward(params, images);
  if (!active.empty()) logits = mask_inactive_classes(logits, active);
  return loss(logits, labels);
}

std::vector<Tensor> matched_gradients(const ModelParams& params, const Tensor& images,
                                      std::span<const int> labels, std::span<const int> active) {
  GradModeGuard on(true);
  const std::vector<Tensor> weights = params.matched();
  return grad(batch_loss(params, images, labels, active), weights, false);
}

Tensor matching_distance(std::span<const Tensor> real_grads, const ModelParams& params,
                         const Tensor& syn_images, std::span<const int> syn_labels,
                         std::span<const int> active) {
  const std::vector<Tensor> weights = params.matched();
  if (real_grads.size() != weights.size())
    throw ContractError("matching_distance: expected " + std::to_string(weights.size()) +
                        " real gradients, got " + std::to_string(real_grads.size()));
  GradModeGuard on(true);
  auto syn = grad(batch_loss(params, syn_images, syn_labels, active), weights, true);
  Tensor total = layer_distance(real_grads[0], syn[0]);
  for (std::size_t i = 1; i < syn.size(); ++i)
    total = ops::add(total, layer_distance(real_grads[i], syn[i]));
  return total;
}

Tensor gradient_match_loss(const ModelParams& params, const Batch& real, const Tensor& syn_images,
                           std::span<const int> syn_labels, std::span<const int> active) {
  if (debug_checks_enabled()) {
    if (!single_class(real.labels) || !single_class(syn_labels) || real.labels.empty() ||
        syn_labels.empty() || real.labels.front() != syn_labels.front())
      throw ContractError("gradient_match_loss: batches must share a single class");
  }
  auto real_grads = matched_gradients(params, real.images, real.labels, active);
  return matching_distance(real_grads, params, syn_images, syn_labels, active);
}

ClassMemory ClassMemory::composite(int label, std::size_t num_components,
                                   std::size_t num_images, const Shape& image_shape, Rng& rng) {
  ClassComposite c = init_composite(label, num_components, num_images, image_shape, rng);
  c.components.set_requires_grad();
  c.weights.set_requires_grad();
  return ClassMemory(std::move(c));
}

ClassMemory ClassMemory::synthetic(int label, std::size_t num_images, const Shape& image_shape,
                                   Rng& rng) {
  if (num_images == 0) throw ContractError("synthetic memory needs at least one image");
  if (image_shape.size() != 3) throw DimensionError("image shape must be {C, H, W}");
  Shape shape{num_images};
  shape.insert(shape.end(), image_shape.begin(), image_shape.end());
  SyntheticImages s{label, Tensor(shape)};
  for (auto& v : s.images.mutable_data()) v = rng.uniform(0.0, 1.0);
  s.images.set_requires_grad();
  return ClassMemory(std::move(s));
}

int ClassMemory::label() const {
  return std::visit([](const auto& m) { return m.label; }, memory_);
}

MemoryKind ClassMemory::kind() const {
  return std::holds_alternative<ClassComposite>(memory_) ? MemoryKind::composite
                                                        : MemoryKind::synthetic;
}

std::size_t ClassMemory::num_images() const {
  if (const auto* c = std::get_if<ClassComposite>(&memory_)) return c->num_images();
  return std::get<SyntheticImages>(memory_).images.dim(0);
}

Tensor ClassMemory::images() const {
  if (const auto* c = std::get_if<ClassComposite>(&memory_)) return synthesize(*c);
  return std::get<SyntheticImages>(memory_).images;
}

std::vector<Tensor> ClassMemory::leaves() const {
  if (const auto* c = std::get_if<ClassComposite>(&memory_)) return {c->components, c->weights};
  return {std::get<SyntheticImages>(memory_).images};
}

MemoryEntry ClassMemory::to_entry() const {
  if (const auto* c = std::get_if<ClassComposite>(&memory_))
    return ClassComposite{c->label, c->components.detach(), c->weights.detach()};
  const auto& s = std::get<SyntheticImages>(memory_);
  return SyntheticImages{s.label, s.images.detach()};
}

ProgressSink csv_progress_sink(std::ostream& out) {
  out << "outer,inner,step,class,loss\n";
  return [&out](const MatchProgress& p) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", p.loss);
    out << p.outer << ',' << p.inner << ',' << p.step << ',' << p.class_label << ',' << buf << '\n';
  };
}

void condense_class(ClassMemory& memory, const LabeledDataset& data, const RehearsalBuffer& buffer,
                    const CondenseOptions& options, Rng& rng, const ProgressSink& sink) {
  const MatchConfig& mc = options.match;
  mc.validate();
  options.model.validate();
  const int label = memory.label();
  if (!data.has_class(label))
    throw InputError("no training examples of class " + std::to_string(label));
  const std::vector<int> syn_labels(memory.num_images(), label);
  const std::vector<Tensor> leaves = memory.leaves();
  const std::span<const int> active = options.active_classes;
  GradModeGuard on(true);

  for (std::size_t k = 0; k < mc.outer_iterations; ++k) {
    ModelParams params = init_params(options.model, rng);
    params.set_requires_grad(true);
    const std::vector<Tensor> theta = params.all();
    const std::vector<std::size_t> matched = matched_positions(params);
    for (std::size_t t = 0; t < mc.inner_iterations; ++t) {
      const Batch real = sample_class_batch(data, label, mc.condensation_batch, rng);
      // Gradients w.r.t. all of theta; the matched subset is the target of
      // the matching steps and the whole set is reused by the first training
      // step, since theta does not move in between.
      const auto real_full = grad(batch_loss(params, real.images, real.labels, active), theta);
      std::vector<Tensor> real_grads;
      for (std::size_t m : matched) real_grads.push_back(real_full[m]);
      for (std::size_t i = 0; i < mc.matching_iterations; ++i) {
        Tensor distance = matching_distance(real_grads, params, memory.images(), syn_labels, active);
        const auto g = grad(distance, leaves);
        std::vector<Tensor> targets = leaves;
        sgd_step(targets, g, mc.condensation_lr);
        if (sink) sink({k, t, i, label, distance.item()});
      }
      if (mc.model_iterations == 0) continue;
      const auto rehearsal = buffer.minibatch(mc.training_batch, rng);
      std::vector<Tensor> step_grads = real_full;
      if (rehearsal) {
        // Mean loss over the joined batch = size-weighted mean of the parts.
        const auto buf = grad(batch_loss(params, rehearsal->images, rehearsal->labels, active), theta);
        const double nr = static_cast<double>(real.size());
        const double nb = static_cast<double>(rehearsal->size());
        NoGradGuard no_grad;
        for (std::size_t q = 0; q < theta.size(); ++q)
          step_grads[q] = ops::add(ops::affine(real_full[q], nr / (nr + nb)),
                                   ops::affine(buf[q], nb / (nr + nb)));
      }
      std::vector<Tensor> targets = theta;
      sgd_step(targets, step_grads, mc.training_lr);
      if (mc.model_iterations > 1) {
        const Batch train = rehearsal ? concat_batches(real, *rehearsal) : real;
        for (std::size_t j = 1; j < mc.model_iterations; ++j) {
          const auto g = grad(batch_loss(params, train.images, train.labels, active), theta);
          sgd_step(targets, g, mc.training_lr);
        }
      }
    }
  }
}

void condense_task(const Task& task, RehearsalBuffer& buffer, const CondenseOptions& options,
                   Rng& rng, const ProgressSink& sink) {
  if (options.num_images == 0) throw BudgetError("per-class quota is zero");
  if (options.kind == MemoryKind::composite && options.num_components == 0)
    throw BudgetError("per-class component quota is zero");
  for (int c : task.classes)
    if (buffer.has_class(c))
      throw ContractError("class " + std::to_string(c) + " is already in the buffer");
  const Shape shape = task.train.image_shape();
  std::vector<MemoryEntry> learned;
  for (int c : task.classes) {
    Rng class_rng = rng.derive(static_cast<std::uint64_t>(c));
    ClassMemory memory =
        options.kind == MemoryKind::composite
            ? ClassMemory::composite(c, options.num_components, options.num_images, shape, class_rng)
            : ClassMemory::synthetic(c, options.num_images, shape, class_rng);
    condense_class(memory, task.train, buffer, options, class_rng, sink);
    learned.push_back(memory.to_entry());
  }
  for (auto& e : learned) buffer.add(std::move(e));
}

}  // namespace ccm
