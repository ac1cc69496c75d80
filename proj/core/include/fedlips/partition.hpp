#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedlips/dataset.hpp"
#include "fedlips/rng.hpp"

namespace fedlips::data {

struct ClientSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  friend bool operator==(const ClientSplit&, const ClientSplit&) = default;
};

// Train indices are disjoint across all clients. Test indices are disjoint
// from every train index and within a client, but may repeat across clients.
struct Partition {
  std::vector<ClientSplit> clients;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  friend bool operator==(const Partition&, const Partition&) = default;
};

// For every client: q ~ Dir(alpha * p), p the empirical class prior; train
// and test class counts are q * size rounded by largest remainder. A class
// that runs out of samples hands its shortfall to the client's remaining
// classes in proportion to q (or to p when q has no mass left there).
// Throws ArgumentError when the pool cannot cover the request.
Partition dirichlet_partition(const Dataset& ds, std::size_t n_clients, double alpha,
                              std::size_t samples_per_client, std::size_t test_per_client,
                              std::uint64_t seed);

std::vector<double> class_prior(const Dataset& ds);

// Integer counts summing exactly to `total`: floors of p_i * total, then the
// leftover units to the largest fractional parts (ties to the lower index).
std::vector<std::size_t> largest_remainder(std::span<const double> proportions,
                                           std::size_t total);

// Dirichlet draw that stays normalizable for tiny concentrations (sampled in
// log space). Entries with zero concentration come back as exactly 0.
std::vector<double> sample_dirichlet(std::span<const double> concentration, Rng& rng);

}  // namespace fedlips::data
