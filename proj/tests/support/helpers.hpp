#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "fedlips/config.hpp"
#include "fedlips/dataset.hpp"
#include "fedlips/model.hpp"
#include "fedlips/tensor.hpp"

namespace fedlips::testing {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double scale = 1.0);
std::vector<int> random_labels(std::size_t n, std::size_t classes, std::uint64_t seed);

// Straightforward reference implementations used as independent oracles.
Tensor naive_matmul(const Tensor& a, const Tensor& b);
Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);

// Small, fast experiment config on synthetic data.
ExperimentConfig tiny_config(Method method, std::uint64_t seed = 1);

// Fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const noexcept { return path_; }

 private:
  std::filesystem::path path_;
};

std::string read_file(const std::filesystem::path& p);

// Relative path -> contents for every regular file below `root`.
std::vector<std::pair<std::string, std::string>> snapshot_tree(const std::filesystem::path& root);

}  // namespace fedlips::testing
