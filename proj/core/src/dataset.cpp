#include "fedlips/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "fedlips/error.hpp"

namespace fedlips::data {

Shape Dataset::sample_shape() const {
  if (inputs.rank() < 2) return {1};
  return Shape(inputs.shape().begin() + 1, inputs.shape().end());
}

void validate(const Dataset& ds) {
  if (ds.size() == 0) throw DataError("dataset is empty");
  if (ds.inputs.rank() < 2 || ds.inputs.dim(0) != ds.size()) {
    throw DataError("dataset inputs " + shape_to_string(ds.inputs.shape()) + " do not match " +
                    std::to_string(ds.size()) + " labels");
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.labels[i] < 0 || static_cast<std::size_t>(ds.labels[i]) >= ds.num_classes) {
      throw DataError("label " + std::to_string(ds.labels[i]) + " at index " + std::to_string(i) +
                      " outside [0, " + std::to_string(ds.num_classes) + ")");
    }
  }
}

Batch gather(const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) throw ArgumentError("gather: no indices");
  Shape shape = ds.inputs.shape();
  const std::size_t stride = ds.inputs.size() / shape[0];
  shape[0] = indices.size();
  Batch b{Tensor(shape), std::vector<int>(indices.size())};
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const std::size_t src = indices[i];
    if (src >= ds.size()) {
      throw ArgumentError("gather: index " + std::to_string(src) + " out of range");
    }
    std::copy_n(ds.inputs.data() + src * stride, stride, b.inputs.data() + i * stride);
    b.labels[i] = ds.labels[src];
  }
  return b;
}

Dataset gen_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes == 0 || spec.n_per_class == 0 || spec.sample_shape.empty() ||
      shape_size(spec.sample_shape) == 0 || !(spec.class_separation > 0.0) ||
      !(spec.noise > 0.0)) {
    throw ArgumentError("gen_synthetic: all arguments must be positive");
  }
  const std::size_t dim = shape_size(spec.sample_shape);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<std::vector<double>> means(spec.num_classes, std::vector<double>(dim));
  for (auto& mean : means) {
    double norm = 0.0;
    for (double& v : mean) {
      v = normal(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : mean) v *= spec.class_separation / norm;
  }

  Shape shape{spec.num_classes * spec.n_per_class};
  shape.insert(shape.end(), spec.sample_shape.begin(), spec.sample_shape.end());
  Dataset ds{Tensor(shape), {}, spec.num_classes};
  ds.labels.reserve(shape[0]);
  double* out = ds.inputs.data();
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t i = 0; i < spec.n_per_class; ++i) {
      for (std::size_t j = 0; j < dim; ++j) *out++ = means[c][j] + spec.noise * normal(rng);
      ds.labels.push_back(static_cast<int>(c));
    }
  }
  return ds;
}

Dataset gen_synthetic(std::size_t num_classes, std::size_t dim, std::size_t n_per_class,
                      double class_separation, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.num_classes = num_classes;
  spec.sample_shape = {dim};
  spec.n_per_class = n_per_class;
  spec.class_separation = class_separation;
  spec.seed = seed;
  return gen_synthetic(spec);
}

std::vector<std::vector<double>> class_means(const Dataset& ds) {
  const std::size_t dim = ds.inputs.size() / ds.size();
  std::vector<std::vector<double>> means(ds.num_classes, std::vector<double>(dim, 0.0));
  std::vector<std::size_t> counts(ds.num_classes, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    auto& m = means[static_cast<std::size_t>(ds.labels[i])];
    const double* x = ds.inputs.data() + i * dim;
    for (std::size_t j = 0; j < dim; ++j) m[j] += x[j];
    ++counts[static_cast<std::size_t>(ds.labels[i])];
  }
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    if (counts[c] == 0) continue;
    for (double& v : means[c]) v /= static_cast<double>(counts[c]);
  }
  return means;
}

std::vector<std::size_t> class_histogram(const Dataset& ds, std::span<const std::size_t> indices) {
  std::vector<std::size_t> h(ds.num_classes, 0);
  for (auto i : indices) ++h[static_cast<std::size_t>(ds.labels.at(i))];
  return h;
}

}  // namespace fedlips::data
