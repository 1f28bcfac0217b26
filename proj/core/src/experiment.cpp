#include "ccm/experiment.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "ccm/autograd.hpp"
#include "ccm/error.hpp"

namespace ccm {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(value);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

template <class T>
T parse_unsigned(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc() || ptr != end || text.empty())
    throw ConfigError(key, "expected a non-negative integer, got '" + text + "'");
  return v;
}

std::size_t parse_positive(const std::string& key, const std::string& text) {
  const auto v = parse_unsigned<std::size_t>(key, text);
  if (v == 0) throw ConfigError(key, "must be positive");
  return v;
}

double parse_rate(const std::string& key, const std::string& text) {
  double v = 0.0;
  std::size_t used = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || text.empty())
    throw ConfigError(key, "expected a number, got '" + text + "'");
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(key, "must be positive and finite");
  return v;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + text + "'");
}

template <class T, class F>
std::string join(const std::vector<T>& items, F f) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += f(items[i]);
  }
  return out;
}

std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

struct Field {
  std::function<void(ExperimentConfig&, const std::string&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

template <class M>
Field size_field(M member, bool positive) {
  return {[member, positive](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*member = positive ? parse_positive(k, v) : parse_unsigned<std::size_t>(k, v);
          },
          [member](const ExperimentConfig& c) { return std::to_string(c.*member); }};
}

Field string_field(std::string ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, const std::string&, const std::string& v) { c.*member = v; },
          [member](const ExperimentConfig& c) { return c.*member; }};
}

Field list_field(std::vector<std::string> ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, const std::string&, const std::string& v) {
            c.*member = split_list(v);
          },
          [member](const ExperimentConfig& c) {
            return join(c.*member, [](const std::string& s) { return s; });
          }};
}

Field bool_field(bool ExperimentConfig::*member) {
  return {[member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.*member = parse_bool(k, v);
          },
          [member](const ExperimentConfig& c) { return std::string(c.*member ? "true" : "false"); }};
}

Field match_size(std::size_t MatchConfig::*member, bool positive) {
  return {[member, positive](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.match.*member = positive ? parse_positive(k, v) : parse_unsigned<std::size_t>(k, v);
          },
          [member](const ExperimentConfig& c) { return std::to_string(c.match.*member); }};
}

Field match_rate(double MatchConfig::*member) {
  return {[member](ExperimentConfig& c, const std::string& k, const std::string& v) {
            c.match.*member = parse_rate(k, v);
          },
          [member](const ExperimentConfig& c) { return fmt_double(c.match.*member); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = [] {
    using C = ExperimentConfig;
    std::map<std::string, Field> f;
    f["preset"] = {[](C& c, const std::string& k, const std::string& v) {
                     if (v != "paper" && v != "desk")
                       throw ConfigError(k, "expected paper or desk, got '" + v + "'");
                     c.preset = v;
                   },
                   [](const C& c) { return c.preset; }};
    f["dataset"] = {[](C& c, const std::string& k, const std::string& v) {
                      static const std::set<std::string> known{"mnist", "fashionmnist", "cifar10",
                                                               "raw"};
                      if (!known.count(v))
                        throw ConfigError(k, "expected mnist, fashionmnist, cifar10 or raw, got '" +
                                                 v + "'");
                      c.dataset = v;
                    },
                    [](const C& c) { return c.dataset; }};
    f["train_images"] = string_field(&C::train_images);
    f["train_labels"] = string_field(&C::train_labels);
    f["test_images"] = string_field(&C::test_images);
    f["test_labels"] = string_field(&C::test_labels);
    f["cifar_train"] = list_field(&C::cifar_train);
    f["cifar_test"] = list_field(&C::cifar_test);
    f["raw_train"] = string_field(&C::raw_train);
    f["raw_test"] = string_field(&C::raw_test);
    f["max_train_per_class"] = size_field(&C::max_train_per_class, false);
    f["classes_per_task"] = size_field(&C::classes_per_task, true);
    f["strategies"] = {[](C& c, const std::string& k, const std::string& v) {
                         std::vector<StrategyKind> s;
                         for (const auto& item : split_list(v)) {
                           try {
                             s.push_back(parse_strategy(item));
                           } catch (const InputError& e) {
                             throw ConfigError(k, e.what());
                           }
                         }
                         if (s.empty()) throw ConfigError(k, "needs at least one strategy");
                         c.strategies = s;
                       },
                       [](const C& c) {
                         return join(c.strategies, [](StrategyKind s) { return to_string(s); });
                       }};
    f["buffer_sizes"] = {[](C& c, const std::string& k, const std::string& v) {
                           std::vector<std::size_t> b;
                           for (const auto& item : split_list(v))
                             b.push_back(parse_unsigned<std::size_t>(k, item));
                           if (b.empty()) throw ConfigError(k, "needs at least one buffer size");
                           c.buffer_sizes = b;
                         },
                         [](const C& c) {
                           return join(c.buffer_sizes, [](std::size_t b) { return std::to_string(b); });
                         }};
    f["seeds"] = {[](C& c, const std::string& k, const std::string& v) {
                    std::vector<std::uint64_t> s;
                    for (const auto& item : split_list(v))
                      s.push_back(parse_unsigned<std::uint64_t>(k, item));
                    if (s.empty()) throw ConfigError(k, "needs at least one seed");
                    c.seeds = s;
                  },
                  [](const C& c) {
                    return join(c.seeds, [](std::uint64_t s) { return std::to_string(s); });
                  }};
    f["components"] = size_field(&C::components, false);
    f["images"] = size_field(&C::images, false);
    f["images_per_component"] = size_field(&C::images_per_component, true);
    f["filters"] = {[](C& c, const std::string& k, const std::string& v) {
                      c.model.filters = parse_positive(k, v);
                    },
                    [](const C& c) { return std::to_string(c.model.filters); }};
    f["num_blocks"] = {[](C& c, const std::string& k, const std::string& v) {
                         c.model.num_blocks = parse_positive(k, v);
                       },
                       [](const C& c) { return std::to_string(c.model.num_blocks); }};
    f["init"] = {[](C& c, const std::string& k, const std::string& v) {
                   try {
                     c.model.init = parse_init_scheme(v);
                   } catch (const InputError& e) {
                     throw ConfigError(k, e.what());
                   }
                 },
                 [](const C& c) { return to_string(c.model.init); }};
    f["outer_iterations"] = match_size(&MatchConfig::outer_iterations, true);
    f["inner_iterations"] = match_size(&MatchConfig::inner_iterations, true);
    f["matching_iterations"] = match_size(&MatchConfig::matching_iterations, true);
    f["model_iterations"] = match_size(&MatchConfig::model_iterations, false);
    f["condensation_batch"] = match_size(&MatchConfig::condensation_batch, true);
    f["training_batch"] = match_size(&MatchConfig::training_batch, true);
    f["condensation_lr"] = match_rate(&MatchConfig::condensation_lr);
    f["training_lr"] = match_rate(&MatchConfig::training_lr);
    f["train_iterations"] = size_field(&C::train_iterations, true);
    f["head"] = {[](C& c, const std::string& k, const std::string& v) {
                   try {
                     c.head = parse_head_mode(v);
                   } catch (const InputError& e) {
                     throw ConfigError(k, e.what());
                   }
                 },
                 [](const C& c) { return to_string(c.head); }};
    f["output_dir"] = string_field(&C::output_dir);
    f["workers"] = size_field(&C::workers, true);
    f["debug_checks"] = bool_field(&C::debug_checks);
    f["progress_log"] = bool_field(&C::progress_log);
    f["save_buffers"] = bool_field(&C::save_buffers);
    return f;
  }();
  return table;
}

std::vector<std::pair<std::string, std::string>> parse_lines(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(line, "line " + std::to_string(number) + " is not of the form key = value");
    out.emplace_back(trim(std::string_view(line).substr(0, eq)),
                     trim(std::string_view(line).substr(eq + 1)));
  }
  return out;
}

void append_durably(const std::filesystem::path& path, const std::string& text) {
  const int fd = ::open(path.c_str(), O_WRONLY | O_APPEND | O_CREAT, 0644);
  if (fd < 0) throw IoError("cannot open " + path.string() + " for appending");
  std::size_t done = 0;
  while (done < text.size()) {
    const ssize_t n = ::write(fd, text.data() + done, text.size() - done);
    if (n < 0) {
      ::close(fd);
      throw IoError("write to " + path.string() + " failed");
    }
    done += static_cast<std::size_t>(n);
  }
  ::fsync(fd);
  ::close(fd);
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

std::string run_tag(const RunSpec& spec) {
  return to_string(spec.strategy) + "_b" + std::to_string(spec.buffer_size) + "_s" +
         std::to_string(spec.seed);
}

}  // namespace

std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::preset: return "default";
    case Provenance::file: return "file";
    case Provenance::flag: return "flag";
  }
  return "?";
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, field] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

ExperimentConfig ExperimentConfig::from_preset(const std::string& name) {
  ExperimentConfig c;
  if (name == "paper") {
    c.model.filters = 128;
    c.match = MatchConfig{};
    c.train_iterations = 500;
    c.max_train_per_class = 0;
  } else if (name == "desk") {
    c.model.filters = 32;
    c.match = MatchConfig{};
    c.match.outer_iterations = 20;
    c.train_iterations = 300;
    c.max_train_per_class = 2000;
  } else {
    throw ConfigError("preset", "expected paper or desk, got '" + name + "'");
  }
  c.preset = name;
  for (const auto& k : config_keys()) c.provenance[k] = Provenance::preset;
  return c;
}

void ExperimentConfig::set(const std::string& key, const std::string& value, Provenance source) {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError(key, "unknown key");
  it->second.set(*this, key, value);
  provenance[key] = source;
}

std::string ExperimentConfig::get(const std::string& key) const {
  const auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError(key, "unknown key");
  return it->second.get(*this);
}

void ExperimentConfig::require_dataset_paths() const {
  auto need = [](const std::string& key, bool present) {
    if (!present) throw ConfigError(key, "dataset path is required");
  };
  if (dataset == "mnist" || dataset == "fashionmnist") {
    need("train_images", !train_images.empty());
    need("train_labels", !train_labels.empty());
    need("test_images", !test_images.empty());
    need("test_labels", !test_labels.empty());
  } else if (dataset == "cifar10") {
    need("cifar_train", !cifar_train.empty());
    need("cifar_test", !cifar_test.empty());
  } else {
    need("raw_train", !raw_train.empty());
    need("raw_test", !raw_test.empty());
  }
}

std::string ExperimentConfig::describe() const {
  std::string out;
  for (const auto& key : config_keys()) {
    const auto p = provenance.count(key) ? provenance.at(key) : Provenance::preset;
    out += key + " = " + get(key) + "  # " + to_string(p) + "\n";
  }
  return out;
}

ExperimentConfig parse_config(const std::string& text,
                              const std::vector<std::pair<std::string, std::string>>& flags) {
  const auto lines = parse_lines(text);
  std::string preset = "paper";
  for (const auto& [k, v] : lines)
    if (k == "preset") preset = v;
  for (const auto& [k, v] : flags)
    if (k == "preset") preset = v;
  ExperimentConfig c = ExperimentConfig::from_preset(preset);
  for (const auto& [k, v] : lines) c.set(k, v, Provenance::file);
  for (const auto& [k, v] : flags) c.set(k, v, Provenance::flag);
  return c;
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& path,
                             const std::vector<std::pair<std::string, std::string>>& flags) {
  std::string text;
  if (path) {
    std::ifstream in(*path, std::ios::binary);
    if (!in) throw IoError("cannot read config " + path->string());
    std::ostringstream ss;
    ss << in.rdbuf();
    text = ss.str();
  }
  return parse_config(text, flags);
}

DatasetPair load_datasets(const ExperimentConfig& config) {
  config.require_dataset_paths();
  auto limit = [&](LabeledDataset d) {
    return config.max_train_per_class ? d.limit_per_class(config.max_train_per_class) : d;
  };
  if (config.dataset == "cifar10") {
    std::vector<std::filesystem::path> tr(config.cifar_train.begin(), config.cifar_train.end());
    std::vector<std::filesystem::path> te(config.cifar_test.begin(), config.cifar_test.end());
    return {limit(load_cifar10_binary(tr)), load_cifar10_binary(te)};
  }
  if (config.dataset == "raw")
    return {limit(load_raw_cache(config.raw_train)), load_raw_cache(config.raw_test)};
  return {limit(load_idx(config.train_images, config.train_labels)),
          load_idx(config.test_images, config.test_labels)};
}

std::vector<RunSpec> sweep_runs(const ExperimentConfig& config) {
  std::vector<RunSpec> runs;
  for (auto s : config.strategies)
    for (auto b : config.buffer_sizes)
      for (auto seed : config.seeds) runs.push_back({s, b, seed});
  return runs;
}

RunOptions run_options(const ExperimentConfig& config, const DatasetPair& data) {
  RunOptions o;
  o.model = config.model;
  const Shape img = data.train.image_shape();
  if (img[1] != img[2]) throw InputError("images must be square, got " + shape_str(img));
  o.model.input_channels = img[0];
  o.model.input_side = img[1];
  o.model.num_classes = static_cast<std::size_t>(data.train.class_set().back()) + 1;
  o.match = config.match;
  o.train_iterations = config.train_iterations;
  o.head = config.head;
  return o;
}

Strategy make_strategy(const ExperimentConfig& config, const RunSpec& spec) {
  Strategy s;
  s.kind = spec.strategy;
  s.buffer_size = spec.buffer_size;
  s.components = config.components;
  s.images = config.images;
  s.images_per_component = config.images_per_component;
  return s;
}

std::string csv_header() {
  return "dataset,strategy,buffer_size,P,Q,seed,task_index,accuracy,avg_accuracy,storage_reals,"
         "overhead_examples,wall_clock_s\n";
}

std::string csv_rows(const std::string& dataset, const RunSpec& spec, const MemoryShape& memory,
                     const RunResult* result) {
  std::string out;
  char buf[256];
  const std::string prefix = dataset + "," + to_string(spec.strategy) + "," +
                             std::to_string(spec.buffer_size) + "," +
                             std::to_string(memory.components) + "," +
                             std::to_string(memory.images) + "," + std::to_string(spec.seed) + ",";
  if (!result) {
    return prefix + "-1,nan,nan,0,0.0000,0.000\n";
  }
  for (std::size_t t = 0; t < result->final_accuracies.size(); ++t) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f,%.6f,%zu,%.4f,%.3f\n", t, result->final_accuracies[t],
                  result->average_accuracy, result->storage.real_numbers,
                  result->storage.overhead_examples, result->wall_clock_s);
    out += prefix + buf;
  }
  return out;
}

MeanStd mean_std(const std::vector<double>& values) {
  if (values.empty()) return {std::numeric_limits<double>::quiet_NaN(),
                              std::numeric_limits<double>::quiet_NaN()};
  double m = 0.0;
  for (double v : values) m += v;
  m /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - m) * (v - m);
  var /= static_cast<double>(values.size());
  return {m, std::sqrt(var)};
}

std::string format_summary_table(const std::vector<SummaryCell>& cells) {
  std::vector<StrategyKind> strategies;
  std::vector<std::size_t> buffers;
  for (const auto& c : cells) {
    if (std::find(strategies.begin(), strategies.end(), c.strategy) == strategies.end())
      strategies.push_back(c.strategy);
    if (std::find(buffers.begin(), buffers.end(), c.buffer_size) == buffers.end())
      buffers.push_back(c.buffer_size);
  }
  auto find = [&](StrategyKind s, std::size_t b) -> const SummaryCell* {
    for (const auto& c : cells)
      if (c.strategy == s && c.buffer_size == b) return &c;
    return nullptr;
  };
  char buf[64];
  std::string out = "strategy    ";
  for (auto b : buffers) {
    std::snprintf(buf, sizeof buf, "%-18zu", b);
    out += buf;
  }
  out += "\n";
  for (auto s : strategies) {
    std::snprintf(buf, sizeof buf, "%-12s", to_string(s).c_str());
    out += buf;
    for (auto b : buffers) {
      const SummaryCell* c = find(s, b);
      if (!c || c->runs == c->failures) {
        std::snprintf(buf, sizeof buf, "%-18s", "n/a");
      } else {
        std::snprintf(buf, sizeof buf, "%5.1f +/- %-8.1f", 100.0 * c->mean, 100.0 * c->stddev);
      }
      out += buf;
    }
    out += "\n";
    if (s == StrategyKind::composite) {
      out += "overhead*   ";
      for (auto b : buffers) {
        const SummaryCell* c = find(s, b);
        std::snprintf(buf, sizeof buf, "%-18s",
                      c && c->runs > c->failures ? format_overhead(c->overhead_examples).c_str()
                                                 : "n/a");
        out += buf;
      }
      out += "\n";
    }
  }
  return out;
}

SweepReport run_experiments(const ExperimentConfig& config, std::ostream& log) {
  config.require_dataset_paths();
  const std::filesystem::path out_dir = config.output_dir;
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + out_dir.string() + ": " + ec.message());
  if (config.progress_log) std::filesystem::create_directories(out_dir / "progress", ec);
  if (config.save_buffers) std::filesystem::create_directories(out_dir / "buffers", ec);
  if (ec) throw IoError("cannot create subdirectories of " + out_dir.string());

  write_text(out_dir / "run.log", "# resolved configuration\n" + config.describe());
  log << "configuration:\n" << config.describe();
  set_debug_checks(config.debug_checks);

  const DatasetPair data = load_datasets(config);
  const TaskSequence tasks = split_tasks(data.train, data.test, config.classes_per_task);
  const RunOptions base = run_options(config, data);
  const auto runs = sweep_runs(config);
  const std::size_t num_classes = data.train.class_set().size();

  const auto results_path = out_dir / "results.csv";
  write_text(results_path, csv_header());
  std::filesystem::remove(out_dir / "errors.log", ec);

  struct Outcome {
    bool ok = false;
    double average = 0.0;
    double overhead = 0.0;
    std::string error;
  };
  std::vector<Outcome> outcomes(runs.size());
  std::vector<std::optional<std::string>> pending(runs.size());
  std::size_t next_to_write = 0;
  std::mutex mutex;
  std::atomic<std::size_t> next_run{0};

  auto worker = [&] {
    for (std::size_t i = next_run++; i < runs.size(); i = next_run++) {
      const RunSpec& spec = runs[i];
      Outcome outcome;
      std::string rows;
      MemoryShape memory;
      try {
        const Strategy strategy = make_strategy(config, spec);
        memory = memory_shape(strategy, num_classes);
        RunOptions options = base;
        std::ofstream progress;
        if (config.progress_log) {
          progress.open(out_dir / "progress" / (run_tag(spec) + ".csv"));
          options.progress = csv_progress_sink(progress);
        }
        const RunResult r = run_sequence(tasks, strategy, options, spec.seed);
        if (config.save_buffers && !r.buffer.empty())
          save_buffer(r.buffer, out_dir / "buffers" / (run_tag(spec) + ".ccmb"));
        rows = csv_rows(config.dataset, spec, memory, &r);
        outcome = {true, r.average_accuracy, r.storage.overhead_examples, {}};
      } catch (const std::exception& e) {
        rows = csv_rows(config.dataset, spec, memory, nullptr);
        outcome = {false, 0.0, 0.0, e.what()};
      }
      std::lock_guard lock(mutex);
      outcomes[i] = outcome;
      pending[i] = std::move(rows);
      if (outcome.ok) {
        log << "run " << (i + 1) << "/" << runs.size() << " " << run_tag(spec)
            << " average accuracy " << outcome.average << "\n";
      } else {
        log << "run " << (i + 1) << "/" << runs.size() << " " << run_tag(spec)
            << " FAILED: " << outcome.error << "\n";
        append_durably(out_dir / "errors.log", run_tag(spec) + ": " + outcome.error + "\n");
      }
      log.flush();
      // Rows go out in sweep order regardless of completion order.
      while (next_to_write < runs.size() && pending[next_to_write]) {
        append_durably(results_path, *pending[next_to_write]);
        pending[next_to_write].reset();
        ++next_to_write;
      }
    }
  };
  const std::size_t threads = std::min(config.workers, runs.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  SweepReport report;
  report.runs = runs.size();
  for (auto s : config.strategies) {
    for (auto b : config.buffer_sizes) {
      SummaryCell cell{s, b};
      std::vector<double> averages;
      for (std::size_t i = 0; i < runs.size(); ++i) {
        if (runs[i].strategy != s || runs[i].buffer_size != b) continue;
        ++cell.runs;
        if (!outcomes[i].ok) {
          ++cell.failures;
          continue;
        }
        averages.push_back(outcomes[i].average);
        cell.overhead_examples = outcomes[i].overhead;
      }
      const MeanStd ms = mean_std(averages);
      cell.mean = ms.mean;
      cell.stddev = ms.stddev;
      report.failures += cell.failures;
      report.cells.push_back(cell);
    }
  }

  std::string summary =
      "strategy,buffer_size,runs,failures,mean_avg_accuracy,std_avg_accuracy,overhead_examples\n";
  for (const auto& c : report.cells) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%.6f,%.6f,%.4f\n", to_string(c.strategy).c_str(),
                  c.buffer_size, c.runs, c.failures, c.mean, c.stddev, c.overhead_examples);
    summary += buf;
  }
  write_text(out_dir / "summary.csv", summary);
  const std::string table = format_summary_table(report.cells);
  write_text(out_dir / "summary.txt", table);
  log << "\naverage accuracy (%), mean +/- std over seeds:\n" << table;
  return report;
}

std::vector<OverheadRow> overhead_table() {
  std::vector<OverheadRow> rows;
  for (std::size_t b : {20, 40, 60, 80, 100}) rows.push_back({784, b, 0.0, {}});
  for (std::size_t b : {100, 200, 300, 400, 500}) rows.push_back({3072, b, 0.0, {}});
  for (auto& r : rows) {
    r.overhead = composite_overhead(r.buffer_size, 10, r.sample_size, 2);
    r.printed = format_overhead(r.overhead);
  }
  return rows;
}

}  // namespace ccm
