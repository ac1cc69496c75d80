#include "fedlips/partition.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "fedlips/error.hpp"

namespace fedlips::data {

std::vector<double> class_prior(const Dataset& ds) {
  std::vector<double> p(ds.num_classes, 0.0);
  for (int l : ds.labels) p[static_cast<std::size_t>(l)] += 1.0;
  for (double& v : p) v /= static_cast<double>(ds.size());
  return p;
}

std::vector<std::size_t> largest_remainder(std::span<const double> proportions,
                                           std::size_t total) {
  const double sum = std::accumulate(proportions.begin(), proportions.end(), 0.0);
  if (!(sum > 0.0)) throw ArgumentError("largest_remainder: proportions sum to zero");
  std::vector<std::size_t> counts(proportions.size(), 0);
  std::vector<double> frac(proportions.size(), 0.0);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < proportions.size(); ++i) {
    const double exact = proportions[i] / sum * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    frac[i] = exact - std::floor(exact);
    assigned += counts[i];
  }
  // Floating error can push the floor sum one past `total`; trim from the
  // smallest fractional parts in that case.
  std::vector<std::size_t> order(proportions.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
  for (std::size_t k = 0; assigned < total; k = (k + 1) % order.size()) {
    if (proportions[order[k]] > 0.0) {
      ++counts[order[k]];
      ++assigned;
    }
  }
  for (std::size_t k = order.size(); assigned > total && k-- > 0;) {
    if (counts[order[k]] > 0) {
      --counts[order[k]];
      --assigned;
    }
  }
  return counts;
}

std::vector<double> sample_dirichlet(std::span<const double> concentration, Rng& rng) {
  // Gamma(a) = Gamma(a + 1) * U^(1/a); kept in log space so that shapes near
  // zero do not underflow every component to 0.
  std::vector<double> log_g(concentration.size(), -std::numeric_limits<double>::infinity());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < concentration.size(); ++i) {
    const double a = concentration[i];
    if (!(a > 0.0)) continue;
    std::gamma_distribution<double> gamma(a + 1.0, 1.0);
    double u = unif(rng);
    while (u <= 0.0) u = unif(rng);
    log_g[i] = std::log(gamma(rng)) + std::log(u) / a;
    mx = std::max(mx, log_g[i]);
  }
  if (!std::isfinite(mx)) throw ArgumentError("sample_dirichlet: no positive concentration");
  std::vector<double> q(concentration.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (std::isfinite(log_g[i])) {
      q[i] = std::exp(log_g[i] - mx);
      sum += q[i];
    }
  }
  for (double& v : q) v /= sum;
  return q;
}

namespace {

// Counts per class for one client, capped by `available`; any shortfall is
// spread over classes that still have room.
std::vector<std::size_t> allocate(std::span<const double> q, std::span<const double> prior,
                                  std::size_t total, std::span<const std::size_t> available) {
  const std::size_t classes = q.size();
  const std::size_t supply = std::accumulate(available.begin(), available.end(), std::size_t{0});
  if (supply < total) {
    throw ArgumentError("dirichlet_partition: class pools exhausted (need " +
                        std::to_string(total) + ", have " + std::to_string(supply) + ")");
  }
  std::vector<std::size_t> counts = largest_remainder(q, total);
  for (;;) {
    std::size_t shortfall = 0;
    for (std::size_t c = 0; c < classes; ++c) {
      if (counts[c] > available[c]) {
        shortfall += counts[c] - available[c];
        counts[c] = available[c];
      }
    }
    if (shortfall == 0) return counts;

    std::vector<double> weights(classes, 0.0);
    for (std::size_t c = 0; c < classes; ++c) {
      if (counts[c] < available[c]) weights[c] = q[c];
    }
    if (std::accumulate(weights.begin(), weights.end(), 0.0) <= 0.0) {
      for (std::size_t c = 0; c < classes; ++c) {
        if (counts[c] < available[c]) weights[c] = prior[c];
      }
    }
    const auto extra = largest_remainder(weights, shortfall);
    for (std::size_t c = 0; c < classes; ++c) counts[c] += extra[c];
  }
}

}  // namespace

Partition dirichlet_partition(const Dataset& ds, std::size_t n_clients, double alpha,
                              std::size_t samples_per_client, std::size_t test_per_client,
                              std::uint64_t seed) {
  if (n_clients == 0) throw ArgumentError("dirichlet_partition: n_clients must be positive");
  if (!(alpha > 0.0)) throw ArgumentError("dirichlet_partition: alpha must be positive");
  if (samples_per_client == 0) {
    throw ArgumentError("dirichlet_partition: samples_per_client must be positive");
  }
  if (n_clients * (samples_per_client + test_per_client) > ds.size()) {
    throw ArgumentError("dirichlet_partition: " + std::to_string(n_clients) + " clients x (" +
                        std::to_string(samples_per_client) + " + " +
                        std::to_string(test_per_client) + ") samples exceed dataset of " +
                        std::to_string(ds.size()));
  }
  const std::size_t classes = ds.num_classes;
  const std::vector<double> prior = class_prior(ds);

  std::vector<std::vector<std::size_t>> pools(classes);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    pools[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  }
  Rng pool_rng = make_rng(derive_seed(seed, 0xA11CE));
  for (auto& pool : pools) std::shuffle(pool.begin(), pool.end(), pool_rng);

  std::vector<double> concentration(classes);
  for (std::size_t c = 0; c < classes; ++c) concentration[c] = alpha * prior[c];

  Partition part;
  part.alpha = alpha;
  part.seed = seed;
  part.clients.resize(n_clients);
  std::vector<std::vector<double>> q(n_clients);
  std::vector<std::size_t> cursor(classes, 0);

  // Train indices: consumed from the front of each shuffled class pool.
  for (std::size_t i = 0; i < n_clients; ++i) {
    Rng rng = make_rng(derive_seed(seed, 1, i));
    q[i] = sample_dirichlet(concentration, rng);
    std::vector<std::size_t> available(classes);
    for (std::size_t c = 0; c < classes; ++c) available[c] = pools[c].size() - cursor[c];
    const auto counts = allocate(q[i], prior, samples_per_client, available);
    auto& train = part.clients[i].train;
    for (std::size_t c = 0; c < classes; ++c) {
      train.insert(train.end(), pools[c].begin() + static_cast<std::ptrdiff_t>(cursor[c]),
                   pools[c].begin() + static_cast<std::ptrdiff_t>(cursor[c] + counts[c]));
      cursor[c] += counts[c];
    }
    std::sort(train.begin(), train.end());
  }

  // Test indices: sampled without replacement per client from whatever no
  // client trains on, following the same class proportions.
  if (test_per_client > 0) {
    std::vector<std::vector<std::size_t>> rest(classes);
    std::vector<std::size_t> available(classes);
    for (std::size_t c = 0; c < classes; ++c) {
      rest[c].assign(pools[c].begin() + static_cast<std::ptrdiff_t>(cursor[c]), pools[c].end());
      available[c] = rest[c].size();
    }
    for (std::size_t i = 0; i < n_clients; ++i) {
      Rng rng = make_rng(derive_seed(seed, 2, i));
      const auto counts = allocate(q[i], prior, test_per_client, available);
      auto& test = part.clients[i].test;
      for (std::size_t c = 0; c < classes; ++c) {
        std::vector<std::size_t> pool = rest[c];
        for (std::size_t k = 0; k < counts[c]; ++k) {
          std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
          std::swap(pool[k], pool[pick(rng)]);
          test.push_back(pool[k]);
        }
      }
      std::sort(test.begin(), test.end());
    }
  }
  return part;
}

}  // namespace fedlips::data
