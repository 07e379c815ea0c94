#include <gtest/gtest.h>

#include <omp.h>

#include <cstring>

#include "test_support.hpp"
#include "vpl/numcore/kernels.hpp"

using namespace vpl;
namespace k = vpl::kernels;

namespace {

// Naive oracle with op(A), op(B) indexed explicitly.
std::vector<double> naive_gemm(k::Trans ta, k::Trans tb, std::size_t m, std::size_t n,
                               std::size_t kk, const std::vector<double>& a,
                               const std::vector<double>& b) {
  std::vector<double> c(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < kk; ++p) {
        const double av = ta == k::Trans::kNo ? a[i * kk + p] : a[p * m + i];
        const double bv = tb == k::Trans::kNo ? b[p * n + j] : b[j * kk + p];
        s += av * bv;
      }
      c[i * n + j] = s;
    }
  }
  return c;
}

std::vector<double> random_vec(std::size_t n, std::uint64_t seed) {
  const Tensor t = fixtures::random_tensor({n}, seed, -1.0, 1.0);
  return {t.raw(), t.raw() + n};
}

}  // namespace

TEST(Gemm, MatchesNaiveOracleForAllTransposes) {
  const std::size_t m = 7, n = 5, kk = 6;
  for (auto ta : {k::Trans::kNo, k::Trans::kYes}) {
    for (auto tb : {k::Trans::kNo, k::Trans::kYes}) {
      const auto a = random_vec(m * kk, 1), b = random_vec(kk * n, 2);
      std::vector<double> c(m * n, 0.0);
      k::serial::gemm(ta, tb, m, n, kk, a.data(), b.data(), c.data(), false);
      const auto want = naive_gemm(ta, tb, m, n, kk, a, b);
      for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], want[i], 1e-13);
    }
  }
}

TEST(Gemm, AccumulateAdds) {
  const auto a = random_vec(6, 3), b = random_vec(6, 4);
  std::vector<double> c(4, 1.0);
  k::gemm(k::Trans::kNo, k::Trans::kNo, 2, 2, 3, a.data(), b.data(), c.data(), true);
  const auto want = naive_gemm(k::Trans::kNo, k::Trans::kNo, 2, 2, 3, a, b);
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(c[i], want[i] + 1.0, 1e-14);
}

TEST(Gemm, ParallelIsBitwiseEqualToSerial) {
  const int saved = omp_get_max_threads();
  omp_set_num_threads(4);
  // Large enough to cross the parallel threshold.
  const std::size_t m = 96, n = 80, kk = 64;
  for (auto ta : {k::Trans::kNo, k::Trans::kYes}) {
    for (auto tb : {k::Trans::kNo, k::Trans::kYes}) {
      const auto a = random_vec(m * kk, 5), b = random_vec(kk * n, 6);
      std::vector<double> cs(m * n, 0.5), cp(m * n, 0.5);
      k::serial::gemm(ta, tb, m, n, kk, a.data(), b.data(), cs.data(), true);
      k::gemm(ta, tb, m, n, kk, a.data(), b.data(), cp.data(), true);
      EXPECT_EQ(0, std::memcmp(cs.data(), cp.data(), cs.size() * sizeof(double)));
    }
  }
  omp_set_num_threads(saved);
}

TEST(Attention, ParallelIsBitwiseEqualToSerial) {
  const int saved = omp_get_max_threads();
  omp_set_num_threads(4);
  const k::AttentionDims d{8, 17, 4, 32};
  const auto qkv = random_vec(d.batch * d.tokens * 3 * d.dim, 7);
  const auto dout = random_vec(d.batch * d.tokens * d.dim, 8);
  std::vector<double> out_s(d.batch * d.tokens * d.dim), out_p(out_s.size());
  std::vector<double> pr_s(d.prob_size()), pr_p(d.prob_size());
  k::serial::attention_forward(d, qkv.data(), out_s.data(), pr_s.data());
  k::attention_forward(d, qkv.data(), out_p.data(), pr_p.data());
  EXPECT_EQ(0, std::memcmp(out_s.data(), out_p.data(), out_s.size() * sizeof(double)));
  EXPECT_EQ(0, std::memcmp(pr_s.data(), pr_p.data(), pr_s.size() * sizeof(double)));

  std::vector<double> g_s(qkv.size(), 0.0), g_p(qkv.size(), 0.0);
  k::serial::attention_backward(d, qkv.data(), pr_s.data(), dout.data(), g_s.data());
  k::attention_backward(d, qkv.data(), pr_p.data(), dout.data(), g_p.data());
  EXPECT_EQ(0, std::memcmp(g_s.data(), g_p.data(), g_s.size() * sizeof(double)));
  omp_set_num_threads(saved);
}

TEST(Attention, ProbabilitiesSumToOne) {
  const k::AttentionDims d{2, 5, 2, 8};
  const auto qkv = random_vec(d.batch * d.tokens * 3 * d.dim, 9);
  std::vector<double> out(d.batch * d.tokens * d.dim), probs(d.prob_size());
  k::serial::attention_forward(d, qkv.data(), out.data(), probs.data());
  for (std::size_t row = 0; row < d.batch * d.heads * d.tokens; ++row) {
    double s = 0.0;
    for (std::size_t j = 0; j < d.tokens; ++j) s += probs[row * d.tokens + j];
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}
