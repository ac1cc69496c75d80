#include <benchmark/benchmark.h>

#include "fedlips/fed.hpp"
#include "fedlips/platform.hpp"

namespace {

using namespace fedlips;

// One communication round of the acceptance-scale setup (30 clients x 100
// samples, vgg_mini, 5 local epochs). Arg: method.
void BM_Round(benchmark::State& state) {
  ExperimentConfig cfg;
  cfg.n_clients = 30;
  cfg.rounds = 1000;
  cfg.method = static_cast<Method>(state.range(0));
  cfg.lips.k = 1;
  for (auto _ : state) {
    state.PauseTiming();
    fed::Simulation sim(cfg);
    sim.run_round();  // first round has no delta to mask with
    state.ResumeTiming();
    sim.run_round();
  }
  state.SetLabel(std::string(to_string(cfg.method)));
}
BENCHMARK(BM_Round)
    ->Arg(static_cast<int>(Method::kFedBN))
    ->Arg(static_cast<int>(Method::kLips))
    ->Unit(benchmark::kMillisecond)
    ->Iterations(3);

}  // namespace
int main(int argc, char** argv) {
  fedlips::configure_allocator();
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
