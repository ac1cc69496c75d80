#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fedlips/dataset.hpp"
#include "fedlips/model.hpp"

namespace fedlips::metrics {

struct LayerValue {
  std::string layer;
  double value = 0.0;
  friend bool operator==(const LayerValue&, const LayerValue&) = default;
};

struct RoundRecord {
  int round = 0;
  double mean_accuracy = 0.0;
  std::vector<LayerValue> cosine;     // empty before the reference round
  std::vector<LayerValue> grad_norm;  // mean over clients of per-step norms
  friend bool operator==(const RoundRecord&, const RoundRecord&) = default;
};

struct MetricsLog {
  std::vector<RoundRecord> rounds;
  friend bool operator==(const MetricsLog&, const MetricsLog&) = default;
};

// dot(a, b) / (|a| |b|). Throws ArgumentError on a zero-norm input.
double layer_cosine(std::span<const double> current, std::span<const double> reference);

// Fraction of rows whose argmax (first maximum on ties) equals the label.
double accuracy_from_logits(const Tensor& logits, std::span<const int> labels);

// Eval-mode accuracy of `model` (with its own BN running statistics) on the
// selected samples, processed in chunks of `batch_size`.
double evaluate_accuracy(const model::ModelParams& model, const data::Dataset& ds,
                         std::span<const std::size_t> indices, std::size_t batch_size = 256);

// Appends one record. `client_grad_norms[i]` is aligned with
// model::weight_layer_names(global). Cosines are filled only when
// `reference` is non-null.
void record_round(MetricsLog& log, int round, std::span<const double> client_accuracies,
                  const model::ModelParams& global, const model::ModelParams* reference,
                  std::span<const std::vector<double>> client_grad_norms);

// accuracy.csv (round,mean_accuracy), cosine.csv (round,layer,cosine) and
// gradnorm.csv (round,layer,mean_grad_norm), numbers at 17 significant digits.
void export_csv(const MetricsLog& log, const std::filesystem::path& directory);
MetricsLog load_csv(const std::filesystem::path& directory);

// Final mean accuracy plus final per-layer cosine and gradient norm.
std::string summary_json(const MetricsLog& log);

std::string format_double(double v);

}  // namespace fedlips::metrics
