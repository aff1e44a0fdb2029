// Serial reference vs OpenMP kernels on the shapes that dominate training:
// a 32-example minibatch through a 784 -> 512 layer.
#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "advx/kernels.hpp"
#include "advx/model.hpp"

namespace {

std::vector<double> random_values(std::size_t n, unsigned seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  std::vector<double> v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

template <auto Kernel>
void run_gemm(benchmark::State& state, std::size_t n, std::size_t k, std::size_t m,
              std::size_t a_size, std::size_t b_size) {
  const auto a = random_values(a_size, 1);
  const auto b = random_values(b_size, 2);
  std::vector<double> c(n * m);
  for (auto _ : state) {
    Kernel(a, b, c, n, k, m);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["GFLOP/s"] = benchmark::Counter(
      2.0 * static_cast<double>(n * k * m), benchmark::Counter::kIsIterationInvariantRate,
      benchmark::Counter::kIs1000);
}

void BM_gemm_nn_parallel(benchmark::State& s) {
  const std::size_t n = s.range(0);
  run_gemm<advx::kernels::gemm_nn>(s, n, 784, 512, n * 784, 784 * 512);
}
void BM_gemm_nn_reference(benchmark::State& s) {
  const std::size_t n = s.range(0);
  run_gemm<advx::kernels::reference::gemm_nn>(s, n, 784, 512, n * 784, 784 * 512);
}
// Weight gradient: x^T dy.
void BM_gemm_tn_parallel(benchmark::State& s) {
  const std::size_t n = s.range(0);
  run_gemm<advx::kernels::gemm_tn>(s, 784, n, 512, n * 784, n * 512);
}
void BM_gemm_tn_reference(benchmark::State& s) {
  const std::size_t n = s.range(0);
  run_gemm<advx::kernels::reference::gemm_tn>(s, 784, n, 512, n * 784, n * 512);
}
// Input gradient: dy W^T.
void BM_gemm_nt_parallel(benchmark::State& s) {
  const std::size_t n = s.range(0);
  run_gemm<advx::kernels::gemm_nt>(s, n, 512, 784, n * 512, 784 * 512);
}
void BM_gemm_nt_reference(benchmark::State& s) {
  const std::size_t n = s.range(0);
  run_gemm<advx::kernels::reference::gemm_nt>(s, n, 512, 784, n * 512, 784 * 512);
}

void BM_predict_default_mlp(benchmark::State& s) {
  const auto model = advx::Model::init(advx::ModelConfig{});
  const std::size_t n = s.range(0);
  advx::Tensor x({n, 784}, random_values(n * 784, 3));
  for (auto _ : s) benchmark::DoNotOptimize(model.predict(x));
}

}  // namespace

BENCHMARK(BM_gemm_nn_parallel)->Arg(32)->Arg(500);
BENCHMARK(BM_gemm_nn_reference)->Arg(32)->Arg(500);
BENCHMARK(BM_gemm_tn_parallel)->Arg(32)->Arg(500);
BENCHMARK(BM_gemm_tn_reference)->Arg(32)->Arg(500);
BENCHMARK(BM_gemm_nt_parallel)->Arg(32)->Arg(500);
BENCHMARK(BM_gemm_nt_reference)->Arg(32)->Arg(500);
BENCHMARK(BM_predict_default_mlp)->Arg(500);

BENCHMARK_MAIN();
