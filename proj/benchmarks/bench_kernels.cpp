#include <benchmark/benchmark.h>

#include "fedlips/kernels.hpp"
#include "fedlips/rng.hpp"

namespace {

using namespace fedlips;

Tensor random_tensor(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng = make_rng(seed);
  std::normal_distribution<double> nd(0.0, 1.0);
  for (double& v : t.values()) v = nd(rng);
  return t;
}

// Args: batch, channels, side, filters.
void BM_Conv2dForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  const auto s = static_cast<std::size_t>(state.range(2));
  const auto f = static_cast<std::size_t>(state.range(3));
  const Tensor x = random_tensor({n, c, s, s}, 1);
  const Tensor w = random_tensor({f, c, 3, 3}, 2);
  const Tensor b = random_tensor({f}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(numerics::conv2d_forward(x, w, b, 1, 1));
  state.counters["MAC/s"] = benchmark::Counter(static_cast<double>(n * f * s * s * c * 9),
                                               benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Conv2dForward)->Args({100, 3, 8, 8})->Args({100, 8, 8, 8})->Args({100, 16, 4, 16});

void BM_Conv2dBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto c = static_cast<std::size_t>(state.range(1));
  const auto s = static_cast<std::size_t>(state.range(2));
  const auto f = static_cast<std::size_t>(state.range(3));
  const Tensor x = random_tensor({n, c, s, s}, 1);
  const Tensor w = random_tensor({f, c, 3, 3}, 2);
  const Tensor dy = random_tensor({n, f, s, s}, 3);
  for (auto _ : state) benchmark::DoNotOptimize(numerics::conv2d_backward(x, w, dy, 1, 1, true));
}
BENCHMARK(BM_Conv2dBackward)->Args({100, 3, 8, 8})->Args({100, 8, 8, 8})->Args({100, 16, 4, 16});

void BM_Matmul(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({m, m}, 1);
  const Tensor b = random_tensor({m, m}, 2);
  for (auto _ : state) benchmark::DoNotOptimize(numerics::matmul(a, b));
  state.counters["FLOP/s"] = benchmark::Counter(2.0 * static_cast<double>(m * m * m),
                                                benchmark::Counter::kIsIterationInvariantRate);
}
BENCHMARK(BM_Matmul)->Arg(64)->Arg(256);

void BM_BatchNormTrain(benchmark::State& state) {
  const Tensor x = random_tensor({100, 16, 8, 8}, 1);
  const Tensor gamma(Shape{16}, 1.0), beta(Shape{16}, 0.0);
  numerics::RunningStats running{Tensor(Shape{16}, 0.0), Tensor(Shape{16}, 1.0)};
  for (auto _ : state) {
    benchmark::DoNotOptimize(numerics::batchnorm_forward(x, gamma, beta, running,
                                                         numerics::BatchNormMode::kTrain));
  }
}
BENCHMARK(BM_BatchNormTrain);

}  // namespace
