#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedlips/model.hpp"

// Transient sensitivity-guided sparsity. After aggregation, every client
// zeroes (or resets) the lowest-scoring fraction tau of each middle layer's
// weights, then trains densely from that point.
namespace fedlips::lips {

enum class Criterion { kSensitivity, kMagnitude, kRandom };
enum class Reinit { kZero, kOriginalInit };

std::string_view to_string(Criterion c);
std::string_view to_string(Reinit r);
Criterion parse_criterion(std::string_view id);
Reinit parse_reinit(std::string_view id);

// One flat vector per layer, aligned with model::layer_weight_vector.
struct LayerValues {
  std::string layer;
  std::vector<double> values;
  friend bool operator==(const LayerValues&, const LayerValues&) = default;
};
using SensitivityScores = std::vector<LayerValues>;

// s_j = |delta_j * w_j| per layer. `weights` are the values about to be
// masked, `deltas` the change produced by the most recent local training.
SensitivityScores sensitivity_scores(std::span<const LayerValues> weights,
                                     std::span<const LayerValues> deltas);

// tau0 * (1 - t / T) for 0 <= t <= T.
double decayed_tau(int t, double tau0, int total_rounds);

// Masking fires on rounds t >= k with t % k == 0.
bool is_mask_round(int t, int k) noexcept;

// floor(tau * n): positions zeroed in a layer of n weights.
std::size_t masked_count(double tau, std::size_t n) noexcept;

struct LayerMask {
  std::string layer;
  std::vector<std::uint8_t> keep;  // 1 = keep, 0 = masked
  std::size_t zero_count() const noexcept;
  friend bool operator==(const LayerMask&, const LayerMask&) = default;
};

struct SparsityMask {
  std::vector<LayerMask> layers;
  double tau_used = 0.0;
  Criterion criterion = Criterion::kSensitivity;
  friend bool operator==(const SparsityMask&, const SparsityMask&) = default;
};

// Middle weight layers: everything except the first and last weight layers,
// batch-norm layers and biases.
std::vector<std::string> default_scope(const model::ModelParams& model);

// Throws ArgumentError if any name is not a middle weight layer of `model`.
void check_scope(const model::ModelParams& model, std::span<const std::string> scope);

// Per scoped layer, masks the floor(tau * n) positions with the lowest
// value: the score for kSensitivity, |w| for kMagnitude. Ties go to the lower
// flat index. kRandom draws positions without replacement from a stream
// derived from `seed` and the layer's position in `scope`; `values` then
// only supplies layer sizes.
SparsityMask select_mask(const model::ModelParams& model, std::span<const LayerValues> values,
                         double tau, Criterion criterion, std::span<const std::string> scope,
                         std::uint64_t seed);

// Masked positions become 0 (kZero) or the value at the same position of
// `init_snapshot` (kOriginalInit). Everything outside the mask is untouched.
model::ModelParams apply_mask(const model::ModelParams& model, const SparsityMask& mask,
                              Reinit reinit, const model::ModelParams* init_snapshot = nullptr);
void apply_mask_inplace(model::ModelParams& model, const SparsityMask& mask, Reinit reinit,
                        const model::ModelParams* init_snapshot = nullptr);

std::vector<LayerValues> collect_weights(const model::ModelParams& model,
                                         std::span<const std::string> scope);

// after - before, per scoped layer.
std::vector<LayerValues> weight_deltas(const model::ModelParams& before,
                                       const model::ModelParams& after,
                                       std::span<const std::string> scope);

}  // namespace fedlips::lips
