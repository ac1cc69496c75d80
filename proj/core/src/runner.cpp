#include "fedlips/runner.hpp"

#include <cstdlib>
#include <fstream>

#include "fedlips/error.hpp"

namespace fedlips {

namespace fs = std::filesystem;

void write_artifacts(const ExperimentConfig& cfg, const metrics::MetricsLog& log,
                     const fs::path& directory) {
  metrics::export_csv(log, directory);
  auto write = [&](const char* name, const std::string& text) {
    const fs::path p = directory / name;
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + p.string());
    out << text;
    if (!out) throw IoError("failed writing: " + p.string());
  };
  write("summary.json", metrics::summary_json(log));
  write("config.json", to_json(cfg));
}

metrics::MetricsLog run_to_directory(const ExperimentConfig& cfg, const fed::ProgressFn& progress) {
  if (cfg.output_dir.empty()) throw ConfigError("output_dir", "no output directory given");
  validate(cfg);
  const fs::path target = fs::absolute(cfg.output_dir).lexically_normal();
  fs::path staging = target;
  staging += ".partial";

  std::error_code ec;
  fs::remove_all(staging, ec);
  try {
    metrics::MetricsLog log = fed::run_experiment(cfg, progress);
    fs::create_directories(staging);
    write_artifacts(cfg, log, staging);
    fs::remove_all(target);
    fs::rename(staging, target);
    return log;
  } catch (const fs::filesystem_error& e) {
    fs::remove_all(staging, ec);
    throw IoError(e.what());
  } catch (...) {
    fs::remove_all(staging, ec);
    throw;
  }
}

fs::path default_output_dir(std::string_view config_stem, std::uint64_t seed) {
  const char* root = std::getenv(kOutputRootEnv);
  const fs::path base = (root && *root) ? fs::path(root) : fs::path("runs");
  return base / (std::string(config_stem) + "-seed" + std::to_string(seed));
}

}  // namespace fedlips
