// Serial reference kernels against their OpenMP versions. Shapes follow the
// training hot path: a batch of 128 rows through a fused LSTM weight, and the
// pairwise distances used by the similarity metric.
#include <benchmark/benchmark.h>

#include "incrprobe/kernels.hpp"
#include "incrprobe/rng.hpp"

using namespace incrprobe;

namespace {

Matrix random(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  Matrix m(r, c);
  for (auto& v : m.values()) v = rng.uniform(-1.0, 1.0);
  return m;
}

template <void (*Gemm)(const Matrix&, const Matrix&, Matrix&, bool)>
void BM_gemm(benchmark::State& state) {
  const auto h = static_cast<std::size_t>(state.range(0));
  const Matrix a = random(128, 2 * h, 1);
  const Matrix b = random(2 * h, 4 * h, 2);
  Matrix c(128, 4 * h);
  for (auto _ : state) {
    Gemm(a, b, c, false);
    benchmark::DoNotOptimize(c.values().data());
  }
  state.SetItemsProcessed(state.iterations() * 128 * 2 * h * 4 * h);
}

template <void (*Gemm)(const Matrix&, const Matrix&, Matrix&, bool)>
void BM_gemm_at_b(benchmark::State& state) {
  const auto h = static_cast<std::size_t>(state.range(0));
  const Matrix a = random(128, 2 * h, 1);
  const Matrix g = random(128, 4 * h, 2);
  Matrix c(2 * h, 4 * h);
  for (auto _ : state) {
    Gemm(a, g, c, true);
    benchmark::DoNotOptimize(c.values().data());
  }
}

template <double (*Pairwise)(const Matrix&, kernels::Distance)>
void BM_pairwise(benchmark::State& state) {
  const Matrix s = random(static_cast<std::size_t>(state.range(0)), 128, 3);
  for (auto _ : state) benchmark::DoNotOptimize(Pairwise(s, kernels::Distance::euclidean));
}

}  // namespace

BENCHMARK(BM_gemm<kernels::serial::gemm>)->Name("gemm/serial")->Arg(64)->Arg(128);
BENCHMARK(BM_gemm<kernels::omp::gemm>)->Name("gemm/omp")->Arg(64)->Arg(128);
BENCHMARK(BM_gemm_at_b<kernels::serial::gemm_at_b>)->Name("gemm_at_b/serial")->Arg(64)->Arg(128);
BENCHMARK(BM_gemm_at_b<kernels::omp::gemm_at_b>)->Name("gemm_at_b/omp")->Arg(64)->Arg(128);
BENCHMARK(BM_pairwise<kernels::serial::mean_pairwise_distance>)->Name("pairwise/serial")->Arg(200)->Arg(800);
BENCHMARK(BM_pairwise<kernels::omp::mean_pairwise_distance>)->Name("pairwise/omp")->Arg(200)->Arg(800);

BENCHMARK_MAIN();
