#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "medlasa/numerics/kernels.hpp"
#include "medlasa/tracing/causal_trace.hpp"

using namespace medlasa;

namespace {

Matrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist;
  Matrix m(rows, cols);
  for (double& v : m.values()) v = dist(rng);
  return m;
}

void BM_MatmulParallel(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
  state.counters["threads"] = kernels::max_threads();
}

void BM_MatmulSerial(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Matrix a = random_matrix(n, n, 1), b = random_matrix(n, n, 2);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::matmul(a, b));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}

void trace_grid(benchmark::State& state, bool parallel) {
  ModelConfig cfg;
  cfg.vocab_size = 64;
  cfg.seed = 5;
  const MicroTransformer model = MicroTransformer::initialized(cfg);
  const std::vector<int> prompt{3, 17, 18, 9, 40, 41, 42, 7};
  const std::vector<int> answer{55};
  NoiseSpec noise;
  noise.std = 0.3;
  noise.n_samples = 4;
  noise.seed = 11;
  noise.subject = {1, 3};
  TraceOptions options;
  options.parallel = parallel;
  for (auto _ : state) benchmark::DoNotOptimize(trace_impact(model, prompt, answer, noise, TraceModule::mlp, options));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(prompt.size() * cfg.n_layers));
}

void BM_TraceGridParallel(benchmark::State& state) { trace_grid(state, true); }
void BM_TraceGridSerial(benchmark::State& state) { trace_grid(state, false); }

}  // namespace

BENCHMARK(BM_MatmulSerial)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_MatmulParallel)->Arg(64)->Arg(128)->Arg(256)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_TraceGridSerial)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_TraceGridParallel)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
