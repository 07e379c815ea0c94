// Serial reference kernels against their OpenMP counterparts.
//
//   ./build/bench/vpl_bench --benchmark_filter=Gemm
//   OMP_NUM_THREADS=4 ./build/bench/vpl_bench

#include <benchmark/benchmark.h>
#include <omp.h>

#include <vector>

#include "vpl/numcore/kernels.hpp"
#include "vpl/numcore/rng.hpp"

namespace k = vpl::kernels;

namespace {

std::vector<double> filled(std::size_t n, std::uint64_t seed) {
  vpl::Rng rng(seed);
  std::vector<double> v(n);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& x : v) x = u(rng);
  return v;
}

template <bool Parallel>
void BM_Gemm(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto a = filled(n * n, 1), b = filled(n * n, 2);
  std::vector<double> c(n * n);
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::gemm(k::Trans::kNo, k::Trans::kNo, n, n, n, a.data(), b.data(), c.data(), false);
    } else {
      k::serial::gemm(k::Trans::kNo, k::Trans::kNo, n, n, n, a.data(), b.data(), c.data(), false);
    }
    benchmark::DoNotOptimize(c.data());
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * n * n * n));
  state.counters["threads"] = Parallel ? omp_get_max_threads() : 1;
}

template <bool Parallel>
void BM_AttentionForward(benchmark::State& state) {
  k::AttentionDims d{static_cast<std::size_t>(state.range(0)), 197, 12, 768};
  const auto qkv = filled(d.batch * d.tokens * 3 * d.dim, 3);
  std::vector<double> out(d.batch * d.tokens * d.dim), probs(d.prob_size());
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::attention_forward(d, qkv.data(), out.data(), probs.data());
    } else {
      k::serial::attention_forward(d, qkv.data(), out.data(), probs.data());
    }
    benchmark::DoNotOptimize(out.data());
  }
  state.counters["threads"] = Parallel ? omp_get_max_threads() : 1;
}

template <bool Parallel>
void BM_AttentionBackward(benchmark::State& state) {
  k::AttentionDims d{static_cast<std::size_t>(state.range(0)), 197, 12, 768};
  const auto qkv = filled(d.batch * d.tokens * 3 * d.dim, 4);
  const auto dout = filled(d.batch * d.tokens * d.dim, 5);
  std::vector<double> out(d.batch * d.tokens * d.dim), probs(d.prob_size()), dqkv(qkv.size());
  k::serial::attention_forward(d, qkv.data(), out.data(), probs.data());
  for (auto _ : state) {
    if constexpr (Parallel) {
      k::attention_backward(d, qkv.data(), probs.data(), dout.data(), dqkv.data());
    } else {
      k::serial::attention_backward(d, qkv.data(), probs.data(), dout.data(), dqkv.data());
    }
    benchmark::DoNotOptimize(dqkv.data());
  }
  state.counters["threads"] = Parallel ? omp_get_max_threads() : 1;
}

}  // namespace

BENCHMARK(BM_Gemm<false>)->Name("Gemm/serial")->Arg(64)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Gemm<true>)->Name("Gemm/openmp")->Arg(64)->Arg(256)->Arg(512)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_AttentionForward<false>)->Name("AttentionForward/serial")->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AttentionForward<true>)->Name("AttentionForward/openmp")->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_AttentionBackward<false>)->Name("AttentionBackward/serial")->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_AttentionBackward<true>)->Name("AttentionBackward/openmp")->Arg(1)->Arg(4)->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
