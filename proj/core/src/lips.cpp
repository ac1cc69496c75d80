#include "fedlips/lips.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedlips/error.hpp"
#include "fedlips/rng.hpp"

namespace fedlips::lips {

using model::LayerParams;
using model::LayerRole;
using model::ModelParams;

std::string_view to_string(Criterion c) {
  switch (c) {
    case Criterion::kSensitivity: return "sensitivity";
    case Criterion::kMagnitude: return "magnitude";
    case Criterion::kRandom: return "random";
  }
  return "?";
}

std::string_view to_string(Reinit r) {
  switch (r) {
    case Reinit::kZero: return "zero";
    case Reinit::kOriginalInit: return "original_init";
  }
  return "?";
}

Criterion parse_criterion(std::string_view id) {
  if (id == "sensitivity") return Criterion::kSensitivity;
  if (id == "magnitude") return Criterion::kMagnitude;
  if (id == "random") return Criterion::kRandom;
  throw ArgumentError("unknown mask criterion '" + std::string(id) + "'");
}

Reinit parse_reinit(std::string_view id) {
  if (id == "zero") return Reinit::kZero;
  if (id == "original_init") return Reinit::kOriginalInit;
  throw ArgumentError("unknown reinit mode '" + std::string(id) + "'");
}

SensitivityScores sensitivity_scores(std::span<const LayerValues> weights,
                                     std::span<const LayerValues> deltas) {
  if (weights.size() != deltas.size()) {
    throw ShapeError("sensitivity_scores: " + std::to_string(weights.size()) +
                     " weight layers vs " + std::to_string(deltas.size()) + " delta layers");
  }
  SensitivityScores scores(weights.size());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    const auto& w = weights[l];
    const auto& d = deltas[l];
    if (w.layer != d.layer || w.values.size() != d.values.size()) {
      throw ShapeError("sensitivity_scores: layer '" + w.layer + "' (" +
                       std::to_string(w.values.size()) + ") misaligned with '" + d.layer + "' (" +
                       std::to_string(d.values.size()) + ")");
    }
    scores[l].layer = w.layer;
    scores[l].values.resize(w.values.size());
    for (std::size_t j = 0; j < w.values.size(); ++j) {
      scores[l].values[j] = std::abs(d.values[j] * w.values[j]);
    }
  }
  return scores;
}

double decayed_tau(int t, double tau0, int total_rounds) {
  if (total_rounds <= 0) throw ArgumentError("decayed_tau: T must be positive");
  if (t < 0 || t > total_rounds) {
    throw ArgumentError("decayed_tau: round " + std::to_string(t) + " outside [0, " +
                        std::to_string(total_rounds) + "]");
  }
  if (!(tau0 >= 0.0 && tau0 < 1.0)) throw ArgumentError("decayed_tau: tau0 must be in [0, 1)");
  return tau0 * (1.0 - static_cast<double>(t) / static_cast<double>(total_rounds));
}

bool is_mask_round(int t, int k) noexcept { return k >= 1 && t >= k && t % k == 0; }

std::size_t masked_count(double tau, std::size_t n) noexcept {
  return static_cast<std::size_t>(std::floor(tau * static_cast<double>(n)));
}

std::size_t LayerMask::zero_count() const noexcept {
  return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), std::uint8_t{0}));
}

std::vector<std::string> default_scope(const ModelParams& model) {
  return model::middle_weight_layer_names(model);
}

void check_scope(const ModelParams& model, std::span<const std::string> scope) {
  for (const auto& name : scope) {
    const LayerParams& l = model.layer(name);
    if (!l.is_weight_layer()) {
      throw ArgumentError("mask scope: '" + name + "' is a batch-norm layer");
    }
    if (l.role != LayerRole::kMiddle) {
      throw ArgumentError("mask scope: '" + name + "' is the " +
                          std::string(model::to_string(l.role)) + " layer");
    }
  }
}

namespace {

const LayerValues& find_values(std::span<const LayerValues> values, const std::string& name) {
  for (const auto& v : values) {
    if (v.layer == name) return v;
  }
  throw ArgumentError("select_mask: no values supplied for layer '" + name + "'");
}

// Positions of the z smallest keys; ties resolved toward the lower index.
std::vector<std::size_t> lowest_positions(const std::vector<double>& key, std::size_t z) {
  std::vector<std::size_t> idx(key.size());
  std::iota(idx.begin(), idx.end(), 0);
  if (z == 0) return {};
  auto less = [&](std::size_t a, std::size_t b) {
    return key[a] < key[b] || (key[a] == key[b] && a < b);
  };
  std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(z - 1), idx.end(), less);
  idx.resize(z);
  return idx;
}

}  // namespace

SparsityMask select_mask(const ModelParams& model, std::span<const LayerValues> values,
                         double tau, Criterion criterion, std::span<const std::string> scope,
                         std::uint64_t seed) {
  if (!(tau >= 0.0 && tau < 1.0)) {
    throw ArgumentError("select_mask: tau " + std::to_string(tau) + " outside [0, 1)");
  }
  check_scope(model, scope);
  SparsityMask mask;
  mask.tau_used = tau;
  mask.criterion = criterion;
  for (std::size_t li = 0; li < scope.size(); ++li) {
    const std::string& name = scope[li];
    const std::size_t n = model.layer(name).weight.size();
    const LayerValues& v = find_values(values, name);
    if (v.values.size() != n) {
      throw ShapeError("select_mask: layer '" + name + "' has " + std::to_string(n) +
                       " weights but " + std::to_string(v.values.size()) + " values");
    }
    const std::size_t z = masked_count(tau, n);
    LayerMask lm{name, std::vector<std::uint8_t>(n, 1)};
    switch (criterion) {
      case Criterion::kSensitivity:
        for (auto j : lowest_positions(v.values, z)) lm.keep[j] = 0;
        break;
      case Criterion::kMagnitude: {
        std::vector<double> mag(n);
        for (std::size_t j = 0; j < n; ++j) mag[j] = std::abs(v.values[j]);
        for (auto j : lowest_positions(mag, z)) lm.keep[j] = 0;
        break;
      }
      case Criterion::kRandom: {
        Rng rng = make_rng(derive_seed(seed, li));
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        for (std::size_t k = 0; k < z; ++k) {
          std::uniform_int_distribution<std::size_t> pick(k, n - 1);
          std::swap(idx[k], idx[pick(rng)]);
          lm.keep[idx[k]] = 0;
        }
        break;
      }
    }
    mask.layers.push_back(std::move(lm));
  }
  return mask;
}

void apply_mask_inplace(ModelParams& model, const SparsityMask& mask, Reinit reinit,
                        const ModelParams* init_snapshot) {
  if (reinit == Reinit::kOriginalInit && init_snapshot == nullptr) {
    throw ArgumentError("apply_mask: original_init mode needs an init snapshot");
  }
  for (const LayerMask& lm : mask.layers) {
    LayerParams& l = model.layer(lm.layer);
    if (!l.is_weight_layer() || l.weight.size() != lm.keep.size()) {
      throw ShapeError("apply_mask: mask for '" + lm.layer + "' misaligned with the model");
    }
    const Tensor* init = nullptr;
    if (reinit == Reinit::kOriginalInit) {
      init = &init_snapshot->layer(lm.layer).weight;
      if (init->shape() != l.weight.shape()) {
        throw ShapeError("apply_mask: init snapshot of '" + lm.layer + "' has shape " +
                         shape_to_string(init->shape()));
      }
    }
    for (std::size_t j = 0; j < lm.keep.size(); ++j) {
      if (lm.keep[j]) continue;
      l.weight[j] = init ? (*init)[j] : 0.0;
    }
  }
}

ModelParams apply_mask(const ModelParams& model, const SparsityMask& mask, Reinit reinit,
                       const ModelParams* init_snapshot) {
  ModelParams out = model;
  apply_mask_inplace(out, mask, reinit, init_snapshot);
  return out;
}

std::vector<LayerValues> collect_weights(const ModelParams& model,
                                         std::span<const std::string> scope) {
  std::vector<LayerValues> out;
  out.reserve(scope.size());
  for (const auto& name : scope) out.push_back({name, model::layer_weight_vector(model, name)});
  return out;
}

std::vector<LayerValues> weight_deltas(const ModelParams& before, const ModelParams& after,
                                       std::span<const std::string> scope) {
  std::vector<LayerValues> out;
  out.reserve(scope.size());
  for (const auto& name : scope) {
    const Tensor& b = before.layer(name).weight;
    const Tensor& a = after.layer(name).weight;
    if (a.shape() != b.shape()) {
      throw ShapeError("weight_deltas: layer '" + name + "' changed shape");
    }
    LayerValues d{name, std::vector<double>(a.size())};
    for (std::size_t j = 0; j < a.size(); ++j) d.values[j] = a[j] - b[j];
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace fedlips::lips
