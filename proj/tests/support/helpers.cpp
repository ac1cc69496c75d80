#include "helpers.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <random>
#include <sstream>

#include <unistd.h>

#include "fedlips/rng.hpp"

namespace fedlips::testing {

Tensor random_tensor(const Shape& shape, std::uint64_t seed, double scale) {
  Tensor t(shape);
  Rng rng = make_rng(seed);
  std::normal_distribution<double> nd(0.0, scale);
  for (double& v : t.values()) v = nd(rng);
  return t;
}

std::vector<int> random_labels(std::size_t n, std::size_t classes, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  std::uniform_int_distribution<int> pick(0, static_cast<int>(classes) - 1);
  std::vector<int> out(n);
  for (int& l : out) l = pick(rng);
  return out;
}

Tensor naive_matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < k; ++t) s += a.at(i, t) * b.at(t, j);
      c.at(i, j) = s;
    }
  return c;
}

Tensor naive_conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t f = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor y({n, f, oh, ow});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t o = 0; o < f; ++o)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          double acc = b.empty() ? 0.0 : b[o];
          for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long r = static_cast<long>(i * stride + u) - pad;
                const long q = static_cast<long>(j * stride + v) - pad;
                if (r < 0 || q < 0 || r >= static_cast<long>(h) || q >= static_cast<long>(wd)) continue;
                acc += x[((s * c + ch) * h + r) * wd + q] * w[((o * c + ch) * kh + u) * kw + v];
              }
          y[((s * f + o) * oh + i) * ow + j] = acc;
        }
  return y;
}

ExperimentConfig tiny_config(Method method, std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.dataset.num_classes = 4;
  cfg.dataset.sample_shape = {2, 4, 4};
  cfg.arch = model::Arch::kVggMini;
  cfg.width = 2;
  cfg.n_clients = 4;
  cfg.samples_per_client = 20;
  cfg.test_per_client = 10;
  cfg.alpha = 0.5;
  cfg.rounds = 6;
  cfg.local_epochs = 2;
  cfg.batch_size = 10;
  cfg.lr = 0.05;
  cfg.method = method;
  cfg.lips.k = 2;
  cfg.metrics_t0 = 2;
  cfg.seed = seed;
  return cfg;
}

TempDir::TempDir(const std::string& tag) {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("fedlips-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
  std::filesystem::remove_all(path_);
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::pair<std::string, std::string>> snapshot_tree(const std::filesystem::path& root) {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    out.emplace_back(std::filesystem::relative(e.path(), root).string(), read_file(e.path()));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace fedlips::testing
