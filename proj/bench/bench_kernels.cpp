// Serial reference vs OpenMP kernels on shapes typical of the desk model.

#include <benchmark/benchmark.h>

#include <vector>

#include "dbswin/kernels.hpp"
#include "dbswin/rng.hpp"

namespace k = dbswin::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  dbswin::Rng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

template <auto Gemm>
void BM_Gemm(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto n = static_cast<std::size_t>(state.range(1));
  const auto kk = static_cast<std::size_t>(state.range(2));
  const auto a = random_vec(m * kk, 1), b = random_vec(kk * n, 2);
  std::vector<double> c(m * n);
  for (auto _ : state) {
    std::fill(c.begin(), c.end(), 0.0);
    Gemm(m, n, kk, a, b, c);
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * m * n * kk));
}

template <auto Softmax>
void BM_Softmax(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto cols = static_cast<std::size_t>(state.range(1));
  const auto x = random_vec(rows * cols, 3);
  std::vector<double> y(rows * cols);
  for (auto _ : state) {
    Softmax(rows, cols, x, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows * cols));
}

template <auto LayerNorm>
void BM_LayerNorm(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto cols = static_cast<std::size_t>(state.range(1));
  const auto x = random_vec(rows * cols, 4);
  const std::vector<double> gamma(cols, 1.0), beta(cols, 0.0);
  std::vector<double> y(rows * cols), xhat(rows * cols), rstd(rows);
  for (auto _ : state) {
    LayerNorm(rows, cols, x, gamma, beta, 1e-5, y, xhat, rstd);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * rows * cols));
}

template <auto Gelu>
void BM_Gelu(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto x = random_vec(n, 5);
  std::vector<double> y(n);
  for (auto _ : state) {
    Gelu(x, y);
    benchmark::DoNotOptimize(y.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n));
}

// tokens x channels x out: stage-1 qkv at 64x64 input, MLP, and a large square product
#define GEMM_ARGS Args({256, 48, 16})->Args({256, 64, 16})->Args({1024, 256, 64})->Args({512, 512, 512})

BENCHMARK(BM_Gemm<k::serial::gemm_nn_acc>)->Name("gemm_nn/serial")->GEMM_ARGS->UseRealTime();
BENCHMARK(BM_Gemm<k::parallel::gemm_nn_acc>)->Name("gemm_nn/parallel")->GEMM_ARGS->UseRealTime();
BENCHMARK(BM_Gemm<k::serial::gemm_nt_acc>)->Name("gemm_nt/serial")->GEMM_ARGS->UseRealTime();
BENCHMARK(BM_Gemm<k::parallel::gemm_nt_acc>)->Name("gemm_nt/parallel")->GEMM_ARGS->UseRealTime();
BENCHMARK(BM_Gemm<k::serial::gemm_tn_acc>)->Name("gemm_tn/serial")->GEMM_ARGS->UseRealTime();
BENCHMARK(BM_Gemm<k::parallel::gemm_tn_acc>)->Name("gemm_tn/parallel")->GEMM_ARGS->UseRealTime();

BENCHMARK(BM_Softmax<k::serial::softmax_rows>)->Name("softmax/serial")->Args({512, 16})->Args({4096, 256})->UseRealTime();
BENCHMARK(BM_Softmax<k::parallel::softmax_rows>)->Name("softmax/parallel")->Args({512, 16})->Args({4096, 256})->UseRealTime();

BENCHMARK(BM_LayerNorm<k::serial::layer_norm_rows>)->Name("layernorm/serial")->Args({256, 16})->Args({4096, 128})->UseRealTime();
BENCHMARK(BM_LayerNorm<k::parallel::layer_norm_rows>)->Name("layernorm/parallel")->Args({256, 16})->Args({4096, 128})->UseRealTime();

BENCHMARK(BM_Gelu<k::serial::gelu>)->Name("gelu/serial")->Arg(16384)->Arg(1 << 20)->UseRealTime();
BENCHMARK(BM_Gelu<k::parallel::gelu>)->Name("gelu/parallel")->Arg(16384)->Arg(1 << 20)->UseRealTime();

}  // namespace

BENCHMARK_MAIN();
