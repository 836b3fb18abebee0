#include <benchmark/benchmark.h>

#include <string>

#include "bkno/config.hpp"
#include "bkno/kernel_solver.hpp"
#include "bkno/neural_operator.hpp"
#include "bkno/simulator.hpp"
#include "bkno/transform.hpp"

namespace {

using namespace bkno;

const ScenarioConfig& scenario() {
  static const ScenarioConfig cfg =
      load_config_file(std::string(BKNO_DATA_DIR) + "/paper_s61.json");
  return cfg;
}

void BM_SolveKernels(benchmark::State& state) {
  const auto& cfg = scenario();
  const int n = static_cast<int>(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(solve_kernels(cfg.nominal, cfg.ode, n));
  state.SetComplexityN(n);
}
BENCHMARK(BM_SolveKernels)->Arg(50)->Arg(100)->Arg(200)->Arg(400)->Complexity();

void BM_Infer(benchmark::State& state) {
  const auto& cfg = scenario();
  static const OperatorModel model = [] {
    ParamSpec spec;
    for (int i = 0; i < kParamVectorSize; ++i)
      if (std::string(param_entry_name(i)) == "lambda_minus")
        spec.entries.push_back({i, 0.8, 1.8});
    const auto ds = generate_dataset(scenario().ode, scenario().nominal, spec, 8, 20, 1);
    TrainOptions opts;
    opts.epochs = 5;
    return train(ds, opts, nullptr);
  }();
  const int n = static_cast<int>(state.range(0));
  for (auto _ : state)
    benchmark::DoNotOptimize(infer(model, {cfg.nominal.lambda_minus}, n));
}
BENCHMARK(BM_Infer)->Arg(10)->Arg(100)->Arg(1000);

void BM_Transform(benchmark::State& state) {
  const auto& cfg = scenario();
  const int n = static_cast<int>(state.range(0));
  const auto grid = solve_kernels(cfg.nominal, cfg.ode, n);
  StateSnapshot s = StateSnapshot::zero(n);
  for (int j = 0; j <= n; ++j) {
    const double x = s.x(j);
    s.w[0][static_cast<std::size_t>(j)] = x;
    s.z[static_cast<std::size_t>(j)] = 1.0 - x;
  }
  for (auto _ : state) benchmark::DoNotOptimize(apply_transform(s, grid));
}
BENCHMARK(BM_Transform)->Arg(100)->Arg(200)->Arg(400);

void BM_SimulateShortHorizon(benchmark::State& state) {
  ScenarioConfig cfg = scenario();
  cfg.grid.t_end = 1.0;
  const auto grid = solve_kernels(cfg.nominal, cfg.ode, cfg.grid.nx);
  const Controller ctl{Controller::Kind::Kernels, &grid, ReflectionPoint::X0};
  const MarkovPath path{{0.0}, {cfg.markov.initial_mode}, cfg.grid.t_end};
  for (auto _ : state) benchmark::DoNotOptimize(simulate(cfg, path, ctl));
}
BENCHMARK(BM_SimulateShortHorizon);

}  // namespace

BENCHMARK_MAIN();
