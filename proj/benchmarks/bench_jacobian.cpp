#include <benchmark/benchmark.h>

#include "difftraffic/jacobian.hpp"

namespace {

using namespace difftraffic;

void BM_StepJacobianAnalytical(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const IdmParams params;
  const StepConfig cfg;
  const TrafficState platoon = random_platoon(n, params, cfg, 7);
  const StepResult res = step(platoon, params, cfg);
  for (auto _ : state) {
    BlockJacobian j = step_jacobian(platoon, params, cfg, res.flags);
    benchmark::DoNotOptimize(j.diag.data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_StepJacobianAnalytical)->RangeMultiplier(10)->Range(10, 1000)->Complexity();

void BM_StepJacobianFiniteDifference(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const IdmParams params;
  const StepConfig cfg;
  const TrafficState platoon = random_platoon(n, params, cfg, 7);
  for (auto _ : state) {
    Eigen::MatrixXd j = finite_difference_jacobian(platoon, params, cfg, 1e-5);
    benchmark::DoNotOptimize(j.data());
  }
  state.SetComplexityN(state.range(0));
}
BENCHMARK(BM_StepJacobianFiniteDifference)->RangeMultiplier(10)->Range(10, 100)->Complexity();

void BM_DenseMaterialization(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const IdmParams params;
  const StepConfig cfg;
  const TrafficState ring = random_ring(n, params, cfg, 7);
  const BlockJacobian j = step_jacobian(ring, params, cfg, step(ring, params, cfg).flags);
  for (auto _ : state) {
    Eigen::MatrixXd dense = j.dense();
    benchmark::DoNotOptimize(dense.data());
  }
}
BENCHMARK(BM_DenseMaterialization)->Arg(10)->Arg(100);

}  // namespace
BENCHMARK_MAIN();
