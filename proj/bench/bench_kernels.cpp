#include <benchmark/benchmark.h>

#include <random>

#include "decs/kernels.hpp"
#include "decs/stability.hpp"
#include "decs/stability_grad.hpp"

using namespace decs;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(r, c);
  for (auto& v : m.flat()) v = g(rng);
  return m;
}

// Layer-shaped product: batch x in times (out x in)^T.
template <void (*Gemm)(const Matrix&, const Matrix&, Matrix&)>
void BM_gemm_nt(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = random_matrix(256, n, 1), b = random_matrix(n, n, 2);
  Matrix c;
  for (auto _ : state) {
    Gemm(a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GMAC/s"] = benchmark::Counter(256.0 * n * n * state.iterations() / 1e9, benchmark::Counter::kIsRate);
}

template <AssignmentMatrix (*Fn)(const EmbeddingBatch&, const CentroidSet&, double)>
void BM_co_association(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto z = random_matrix(n, 10, 3), m = random_matrix(10, 10, 4);
  for (auto _ : state) benchmark::DoNotOptimize(Fn(z, m, 1.0));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

template <ClusteringBackward (*Fn)(const EmbeddingBatch&, const CentroidSet&, const StabilityParams&)>
void BM_clustering_backward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto z = random_matrix(n, 10, 5), m = random_matrix(10, 10, 6);
  const StabilityParams p{1.0, 0.8, 0.3};
  for (auto _ : state) benchmark::DoNotOptimize(Fn(z, m, p));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n));
}

}  // namespace

BENCHMARK(BM_gemm_nt<reference::gemm_nt>)->Name("gemm_nt/serial")->Arg(128)->Arg(512);
BENCHMARK(BM_gemm_nt<kernels::gemm_nt>)->Name("gemm_nt/parallel")->Arg(128)->Arg(512);
BENCHMARK(BM_co_association<co_association_serial>)->Name("co_association/serial")->Arg(1000)->Arg(10000);
BENCHMARK(BM_co_association<co_association>)->Name("co_association/parallel")->Arg(1000)->Arg(10000);
BENCHMARK(BM_clustering_backward<clustering_backward_serial>)->Name("clustering_backward/serial")->Arg(1000)->Arg(10000);
BENCHMARK(BM_clustering_backward<clustering_backward>)->Name("clustering_backward/parallel")->Arg(1000)->Arg(10000);

BENCHMARK_MAIN();
