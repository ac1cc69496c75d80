#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedlips/lips.hpp"
#include "fedlips/model.hpp"
#include "fedlips/tensor.hpp"

namespace fedlips {

enum class DatasetKind { kSynthetic, kCifar10 };
enum class Method { kSeparate, kFedAvg, kFedBN, kLips };

// kFreeze: middle weight layers stop aggregating and stop training locally.
// kAggregateOnly: they stop aggregating but keep training on each client.
enum class FixVariant { kFreeze, kAggregateOnly };

std::string_view to_string(DatasetKind k);
std::string_view to_string(Method m);
std::string_view to_string(FixVariant v);
Method parse_method(std::string_view id);

struct DatasetConfig {
  DatasetKind kind = DatasetKind::kSynthetic;
  // synthetic
  std::size_t num_classes = 10;
  Shape sample_shape{3, 8, 8};
  std::size_t n_per_class = 0;  // 0: sized from the client counts
  double class_separation = 4.0;
  double noise = 1.0;
  // cifar10
  std::string directory;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct LipsConfig {
  double tau0 = 0.5;
  int k = 5;
  lips::Criterion criterion = lips::Criterion::kSensitivity;
  lips::Reinit reinit = lips::Reinit::kZero;
  bool hold_mask = false;
  std::optional<std::vector<std::string>> scope;  // default: all middle weight layers

  friend bool operator==(const LipsConfig&, const LipsConfig&) = default;
};

struct ExperimentConfig {
  DatasetConfig dataset;
  model::Arch arch = model::Arch::kVggMini;
  std::size_t width = 0;  // 0: architecture default
  std::size_t n_clients = 10;
  std::size_t samples_per_client = 100;
  std::size_t test_per_client = 100;
  double alpha = 0.1;
  int rounds = 300;
  int local_epochs = 5;
  std::size_t batch_size = 100;
  double lr = 0.1;
  Method method = Method::kFedBN;
  LipsConfig lips;
  std::optional<int> fix_round;
  FixVariant fix_variant = FixVariant::kFreeze;
  int metrics_t0 = 2;
  double participation = 1.0;
  bool common_init = true;
  std::uint64_t seed = 0;
  // Runtime-only: not part of the resolved-config echo.
  std::string output_dir;
  int parallel_workers = 1;

  friend bool operator==(const ExperimentConfig&, const ExperimentConfig&) = default;
};

// Parses a JSON document. Required keys: dataset, method, seed. Unknown keys
// and out-of-range values raise ConfigError naming the field.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& path);

// Throws ConfigError naming the first offending field.
void validate(const ExperimentConfig& cfg);

// Fully resolved config as JSON, every default spelled out. output_dir and
// parallel_workers are left out so that the echo is identical across runs
// that differ only in where and how wide they ran.
std::string to_json(const ExperimentConfig& cfg);

// Samples per class generated for a synthetic dataset.
std::size_t resolved_samples_per_class(const ExperimentConfig& cfg);

// Environment variable consulted for the default output root.
inline constexpr const char* kOutputRootEnv = "FEDLIPS_OUTPUT_ROOT";

}  // namespace fedlips
