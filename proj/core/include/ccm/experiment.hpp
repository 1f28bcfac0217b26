#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "ccm/condensation.hpp"
#include "ccm/continual.hpp"
#include "ccm/data.hpp"
#include "ccm/model.hpp"

namespace ccm {

enum class Provenance { preset, file, flag };
std::string to_string(Provenance p);

/// Every setting of an experiment sweep. Keys are listed by config_keys().
struct ExperimentConfig {
  /// "paper" (full-size defaults) or "desk" (reduced for one CPU core).
  std::string preset = "paper";

  /// mnist, fashionmnist (IDX files), cifar10 (binary batches) or raw
  /// (raw cache files).
  std::string dataset = "mnist";
  std::string train_images, train_labels, test_images, test_labels;
  std::vector<std::string> cifar_train, cifar_test;
  std::string raw_train, raw_test;
  /// Keeps the first N training images of each class; 0 keeps all.
  std::size_t max_train_per_class = 0;
  std::size_t classes_per_task = 2;

  std::vector<StrategyKind> strategies{StrategyKind::composite, StrategyKind::condensation,
                                       StrategyKind::naive};
  std::vector<std::size_t> buffer_sizes{20, 40, 60, 80, 100};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t components = 0;
  std::size_t images = 0;
  std::size_t images_per_component = 2;

  /// Channels, side and class count come from the data.
  ConvNetConfig model;
  MatchConfig match;
  std::size_t train_iterations = 500;
  HeadMode head = HeadMode::fixed;

  std::string output_dir = "results";
  std::size_t workers = 1;
  bool debug_checks = false;
  /// Writes condensation progress CSVs under output_dir/progress.
  bool progress_log = false;
  /// Writes each run's final buffer under output_dir/buffers.
  bool save_buffers = false;

  /// Where each key's value came from.
  std::map<std::string, Provenance> provenance;

  /// Defaults of a preset. Throws ConfigError("preset") for unknown names.
  static ExperimentConfig from_preset(const std::string& name);

  /// Throws ConfigError naming the key for unknown keys or bad values.
  void set(const std::string& key, const std::string& value, Provenance source);
  std::string get(const std::string& key) const;

  /// Throws ConfigError naming the first missing dataset path.
  void require_dataset_paths() const;

  /// "key = value  # provenance" lines in key order.
  std::string describe() const;
};

const std::vector<std::string>& config_keys();

/// Resolves a config from flat "key = value" text ('#' starts a comment)
/// and flag overrides. The preset is chosen first (flag, then file), then
/// file values and flags are applied on top of its defaults.
ExperimentConfig parse_config(const std::string& text,
                              const std::vector<std::pair<std::string, std::string>>& flags);
ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::vector<std::pair<std::string, std::string>>& flags);

struct DatasetPair {
  LabeledDataset train;
  LabeledDataset test;
};

/// Loads the configured train/test sets and applies max_train_per_class.
DatasetPair load_datasets(const ExperimentConfig& config);

/// One (strategy, buffer size, seed) cell of a sweep.
struct RunSpec {
  StrategyKind strategy = StrategyKind::composite;
  std::size_t buffer_size = 0;
  std::uint64_t seed = 0;
};

/// Sweep order: strategies, then buffer sizes, then seeds.
std::vector<RunSpec> sweep_runs(const ExperimentConfig& config);

RunOptions run_options(const ExperimentConfig& config, const DatasetPair& data);
Strategy make_strategy(const ExperimentConfig& config, const RunSpec& spec);

std::string csv_header();
/// One line per task; a failed run is a single line with task_index -1 and
/// NaN accuracies.
std::string csv_rows(const std::string& dataset, const RunSpec& spec, const MemoryShape& memory,
                     const RunResult* result);

struct SummaryCell {
  StrategyKind strategy = StrategyKind::composite;
  std::size_t buffer_size = 0;
  std::size_t runs = 0;
  std::size_t failures = 0;
  double mean = 0.0;
  /// Population standard deviation (divides by the run count).
  double stddev = 0.0;
  double overhead_examples = 0.0;
};

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;
};
MeanStd mean_std(const std::vector<double>& values);

/// Table with a row per strategy and a column per buffer size.
std::string format_summary_table(const std::vector<SummaryCell>& cells);

struct SweepReport {
  std::size_t runs = 0;
  std::size_t failures = 0;
  std::vector<SummaryCell> cells;
};

/// Runs the sweep. results.csv receives each run's rows in sweep order as
/// soon as they are available; summary.csv, summary.txt, run.log and, on
/// failures, errors.log are written to output_dir. Failed runs do not stop
/// the sweep.
SweepReport run_experiments(const ExperimentConfig& config, std::ostream& log);

/// Ten overhead values: 784-pixel inputs with buffers 20..100 and 3072-pixel
/// inputs with buffers 100..500, ten classes, Q = 2P.
struct OverheadRow {
  std::size_t sample_size = 0;
  std::size_t buffer_size = 0;
  double overhead = 0.0;
  std::string printed;
};
std::vector<OverheadRow> overhead_table();

/// Writes every buffer entry as PGM (1 channel) or PPM (3 channels) images
/// plus per-class grids and a manifest.csv. Composite components and free
/// synthetic images are min-max normalised per image; synthesised composites
/// and stored examples are written as is. Throws IoError when the directory
/// cannot be written.
std::vector<std::filesystem::path> dump_images(const RehearsalBuffer& buffer,
                                               const std::filesystem::path& out_dir);

}  // namespace ccm
