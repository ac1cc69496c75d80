#pragma once

#include <filesystem>

#include "fedlips/config.hpp"
#include "fedlips/fed.hpp"

namespace fedlips {

// Runs one experiment and writes accuracy.csv, cosine.csv, gradnorm.csv,
// summary.json and config.json into cfg.output_dir. Files are staged in a
// sibling directory and moved into place only after everything succeeded,
// so a failed run leaves nothing behind. An existing output_dir is replaced.
metrics::MetricsLog run_to_directory(const ExperimentConfig& cfg,
                                     const fed::ProgressFn& progress = {});

// Writes the artifact set for an already computed log.
void write_artifacts(const ExperimentConfig& cfg, const metrics::MetricsLog& log,
                     const std::filesystem::path& directory);

// Output directory used when none is configured: $FEDLIPS_OUTPUT_ROOT (or
// ./runs) / <stem>-seed<seed>.
std::filesystem::path default_output_dir(std::string_view config_stem, std::uint64_t seed);

}  // namespace fedlips
