#include <benchmark/benchmark.h>

#include "fedlips/dataset.hpp"
#include "fedlips/model.hpp"

namespace {

using namespace fedlips;

void BM_ForwardBackward(benchmark::State& state) {
  const auto arch = static_cast<model::Arch>(state.range(0));
  data::SyntheticSpec spec;
  spec.sample_shape = {3, 8, 8};
  spec.n_per_class = 10;
  const data::Dataset ds = data::gen_synthetic(spec);
  const model::ModelParams m = model::build_model(arch, spec.sample_shape, 10, 7);
  for (auto _ : state) benchmark::DoNotOptimize(model::forward_backward(m, ds.inputs, ds.labels));
  state.SetLabel(std::string(model::to_string(arch)));
}
BENCHMARK(BM_ForwardBackward)
    ->Arg(static_cast<int>(model::Arch::kMlp))
    ->Arg(static_cast<int>(model::Arch::kVggMini))
    ->Arg(static_cast<int>(model::Arch::kResnetMini))
    ->Unit(benchmark::kMillisecond);

void BM_SgdStep(benchmark::State& state) {
  const model::ModelParams m = model::build_model(model::Arch::kVggMini, {3, 8, 8}, 10, 7);
  data::SyntheticSpec spec;
  spec.sample_shape = {3, 8, 8};
  spec.n_per_class = 10;
  const data::Dataset ds = data::gen_synthetic(spec);
  const auto fb = model::forward_backward(m, ds.inputs, ds.labels);
  for (auto _ : state) benchmark::DoNotOptimize(model::sgd_step(m, fb.grads, 0.1));
}
BENCHMARK(BM_SgdStep);

}  // namespace
