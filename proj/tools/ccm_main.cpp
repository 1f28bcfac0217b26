// ccm: command line front end for the continual-learning experiments.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>

#include "ccm/error.hpp"
#include "ccm/experiment.hpp"

namespace {

constexpr int kExitRunFailures = 1;
constexpr int kExitUsage = 2;

int cmd_run(const std::optional<std::string>& config_path,
            const std::map<std::string, std::string>& values, CLI::App& run) {
  std::vector<std::pair<std::string, std::string>> flags;
  for (const auto& key : ccm::config_keys())
    if (run.count("--" + key)) flags.emplace_back(key, values.at(key));
  std::optional<std::filesystem::path> path;
  if (config_path) path = *config_path;
  const ccm::ExperimentConfig config = ccm::load_config(path, flags);
  const ccm::SweepReport report = ccm::run_experiments(config, std::cout);
  std::cout << report.runs - report.failures << "/" << report.runs << " runs succeeded\n";
  return report.failures == 0 ? 0 : kExitRunFailures;
}

int cmd_dump(const std::string& buffer_path, const std::string& out_dir) {
  const ccm::RehearsalBuffer buffer = ccm::load_buffer(buffer_path);
  if (buffer.empty()) throw ccm::InputError("buffer " + buffer_path + " holds no classes");
  const auto files = ccm::dump_images(buffer, out_dir);
  std::cout << "wrote " << files.size() << " files to " << out_dir << "\n";
  return 0;
}

int cmd_overhead() {
  std::printf("%-12s %-12s %-10s %s\n", "sample_size", "buffer_size", "overhead", "exact");
  for (const auto& row : ccm::overhead_table())
    std::printf("%-12zu %-12zu %-10s %.6f\n", row.sample_size, row.buffer_size, row.printed.c_str(),
                row.overhead);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental class learning with naive, condensed and composite rehearsal memories"};
  app.require_subcommand(1);

  CLI::App* run = app.add_subcommand("run", "Run the (strategy x buffer size x seed) sweep");
  std::optional<std::string> config_path;
  run->add_option("-c,--config", config_path, "Config file of key = value lines")
      ->check(CLI::ExistingFile);
  std::map<std::string, std::string> values;
  for (const auto& key : ccm::config_keys())
    run->add_option("--" + key, values[key], "Overrides config key " + key);

  CLI::App* dump = app.add_subcommand("dump-images", "Write a saved buffer as PGM/PPM images");
  std::string buffer_path, out_dir;
  dump->add_option("--buffer", buffer_path, "Buffer file written by run save_buffers=true")
      ->required()
      ->check(CLI::ExistingFile);
  dump->add_option("--out", out_dir, "Output directory")->required();

  app.add_subcommand("verify-overhead", "Print the mixing-weight overhead table");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(config_path, values, *run);
    if (dump->parsed()) return cmd_dump(buffer_path, out_dir);
    return cmd_overhead();
  } catch (const ccm::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRunFailures;
  }
}
