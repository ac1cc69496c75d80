#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedlips/tensor.hpp"

namespace fedlips::data {

// inputs: N x sample_shape; labels in [0, num_classes).
struct Dataset {
  Tensor inputs;
  std::vector<int> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const;
};

// Throws DataError when the invariants do not hold.
void validate(const Dataset& ds);

// Copies the selected samples, in the given order, into a fresh batch.
struct Batch {
  Tensor inputs;
  std::vector<int> labels;
};
Batch gather(const Dataset& ds, std::span<const std::size_t> indices);

struct SyntheticSpec {
  std::size_t num_classes = 10;
  Shape sample_shape{32};
  std::size_t n_per_class = 100;
  // Norm of every class mean.
  double class_separation = 4.0;
  // Per-coordinate standard deviation around the class mean.
  double noise = 1.0;
  std::uint64_t seed = 0;
};

// Gaussian blobs: one mean per class along an independent random direction
// (scaled to `class_separation`), isotropic noise of scale `noise`. Samples
// are grouped by class.
Dataset gen_synthetic(const SyntheticSpec& spec);
Dataset gen_synthetic(std::size_t num_classes, std::size_t dim, std::size_t n_per_class,
                      double class_separation, std::uint64_t seed);

// Per-class means of the given dataset, used by the nearest-mean checks.
std::vector<std::vector<double>> class_means(const Dataset& ds);

std::vector<std::size_t> class_histogram(const Dataset& ds, std::span<const std::size_t> indices);

}  // namespace fedlips::data
