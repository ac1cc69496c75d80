#include <CLI11.hpp>

#include <cstdio>
#include <iostream>

#include "fedlips/config.hpp"
#include "fedlips/error.hpp"
#include "fedlips/platform.hpp"
#include "fedlips/runner.hpp"

namespace {

int cmd_validate(const std::string& path) {
  const auto cfg = fedlips::load_config(path);
  std::cout << fedlips::to_json(cfg);
  return 0;
}

int cmd_run(const std::string& path, const std::optional<std::uint64_t>& seed,
            const std::string& output, const std::optional<int>& workers, bool quiet) {
  auto cfg = fedlips::load_config(path);
  if (seed) cfg.seed = *seed;
  if (workers) cfg.parallel_workers = *workers;
  if (!output.empty()) cfg.output_dir = output;
  if (cfg.output_dir.empty()) {
    cfg.output_dir = fedlips::default_output_dir(std::filesystem::path(path).stem().string(), cfg.seed)
                         .string();
  }
  fedlips::validate(cfg);

  fedlips::fed::ProgressFn progress;
  if (!quiet) {
    progress = [&](int round, double acc) {
      std::fprintf(stderr, "round %d/%d  mean accuracy %.4f\n", round, cfg.rounds, acc);
    };
  }
  const auto log = fedlips::run_to_directory(cfg, progress);
  std::cout << cfg.output_dir << "\n";
  if (!quiet && !log.rounds.empty()) {
    std::fprintf(stderr, "final mean accuracy %.4f\n", log.rounds.back().mean_accuracy);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  fedlips::configure_allocator();
  CLI::App app{"Federated learning simulator with transient sensitivity-guided sparsity"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string output;
  bool quiet = false;

  auto* run = app.add_subcommand("run", "Run one experiment and write its metrics");
  run->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Override the master seed");
  run->add_option("--output", output, "Output directory");
  run->add_option("--workers", workers, "Parallel client workers")->check(CLI::PositiveNumber);
  run->add_flag("-q,--quiet", quiet, "No per-round progress");

  auto* val = app.add_subcommand("validate", "Check a config and print it with defaults resolved");
  val->add_option("config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(config_path, seed, output, workers, quiet);
    return cmd_validate(config_path);
  } catch (const fedlips::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
