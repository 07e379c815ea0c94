#include "vpl/numcore/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace vpl::kernels {

namespace {

// One output row of C; the buffer accumulates in ascending p for every j.
void gemm_row(Trans ta, Trans tb, std::size_t i, std::size_t m, std::size_t n, std::size_t k,
              const double* a, const double* b, double* c, bool accumulate, double* row) {
  std::fill(row, row + n, 0.0);
  if (tb == Trans::kNo) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta == Trans::kNo ? a[i * k + p] : a[p * m + i];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double sum = 0.0;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = ta == Trans::kNo ? a[i * k + p] : a[p * m + i];
        sum += av * brow[p];
      }
      row[j] = sum;
    }
  }
  double* crow = c + i * n;
  if (accumulate) {
    for (std::size_t j = 0; j < n; ++j) crow[j] += row[j];
  } else {
    std::copy(row, row + n, crow);
  }
}

void attention_head_forward(const AttentionDims& d, std::size_t b, std::size_t h,
                            const double* qkv, double* out, double* probs) {
  const std::size_t t = d.tokens, dh = d.head_dim(), stride = 3 * d.dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* base = qkv + b * t * stride;
  double* p = probs + ((b * d.heads + h) * t) * t;
  for (std::size_t i = 0; i < t; ++i) {
    const double* q = base + i * stride + h * dh;
    double* prow = p + i * t;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < t; ++j) {
      const double* kv = base + j * stride + d.dim + h * dh;
      double s = 0.0;
      for (std::size_t e = 0; e < dh; ++e) s += q[e] * kv[e];
      prow[j] = s * scale;
      mx = std::max(mx, prow[j]);
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
      prow[j] = std::exp(prow[j] - mx);
      sum += prow[j];
    }
    for (std::size_t j = 0; j < t; ++j) prow[j] /= sum;
    double* o = out + (b * t + i) * d.dim + h * dh;
    std::fill(o, o + dh, 0.0);
    for (std::size_t j = 0; j < t; ++j) {
      const double* v = base + j * stride + 2 * d.dim + h * dh;
      for (std::size_t e = 0; e < dh; ++e) o[e] += prow[j] * v[e];
    }
  }
}

void attention_head_backward(const AttentionDims& d, std::size_t b, std::size_t h,
                             const double* qkv, const double* probs, const double* dout,
                             double* dqkv, double* dp) {
  const std::size_t t = d.tokens, dh = d.head_dim(), stride = 3 * d.dim;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* base = qkv + b * t * stride;
  double* dbase = dqkv + b * t * stride;
  const double* p = probs + ((b * d.heads + h) * t) * t;
  for (std::size_t i = 0; i < t; ++i) {
    const double* go = dout + (b * t + i) * d.dim + h * dh;
    const double* prow = p + i * t;
    // dV_j += P_ij * dout_i ; dP_ij = dout_i . v_j
    double dot = 0.0;
    for (std::size_t j = 0; j < t; ++j) {
      const double* v = base + j * stride + 2 * d.dim + h * dh;
      double* dv = dbase + j * stride + 2 * d.dim + h * dh;
      double s = 0.0;
      for (std::size_t e = 0; e < dh; ++e) {
        dv[e] += prow[j] * go[e];
        s += go[e] * v[e];
      }
      dp[j] = s;
      dot += prow[j] * s;
    }
    const double* q = base + i * stride + h * dh;
    double* dq = dbase + i * stride + h * dh;
    for (std::size_t j = 0; j < t; ++j) {
      const double ds = prow[j] * (dp[j] - dot) * scale;
      const double* kv = base + j * stride + d.dim + h * dh;
      double* dk = dbase + j * stride + d.dim + h * dh;
      for (std::size_t e = 0; e < dh; ++e) {
        dq[e] += ds * kv[e];
        dk[e] += ds * q[e];
      }
    }
  }
}

std::size_t attention_work(const AttentionDims& d) {
  return d.batch * d.heads * d.tokens * d.tokens * d.head_dim();
}

}  // namespace

namespace serial {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  std::vector<double> row(n);
  for (std::size_t i = 0; i < m; ++i) gemm_row(ta, tb, i, m, n, k, a, b, c, accumulate, row.data());
}

void attention_forward(const AttentionDims& d, const double* qkv, double* out, double* probs) {
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t h = 0; h < d.heads; ++h) attention_head_forward(d, b, h, qkv, out, probs);
}

void attention_backward(const AttentionDims& d, const double* qkv, const double* probs,
                        const double* dout, double* dqkv) {
  std::vector<double> dp(d.tokens);
  for (std::size_t b = 0; b < d.batch; ++b)
    for (std::size_t h = 0; h < d.heads; ++h)
      attention_head_backward(d, b, h, qkv, probs, dout, dqkv, dp.data());
}

}  // namespace serial

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  const bool par = m * n * k >= kParallelThreshold && m > 1;
#pragma omp parallel if (par)
  {
    std::vector<double> row(n);
#pragma omp for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
      gemm_row(ta, tb, static_cast<std::size_t>(i), m, n, k, a, b, c, accumulate, row.data());
    }
  }
}

void attention_forward(const AttentionDims& d, const double* qkv, double* out, double* probs) {
  const std::ptrdiff_t cells = static_cast<std::ptrdiff_t>(d.batch * d.heads);
  const bool par = attention_work(d) >= kParallelThreshold && cells > 1;
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t c = 0; c < cells; ++c) {
    const auto b = static_cast<std::size_t>(c) / d.heads;
    const auto h = static_cast<std::size_t>(c) % d.heads;
    attention_head_forward(d, b, h, qkv, out, probs);
  }
}

void attention_backward(const AttentionDims& d, const double* qkv, const double* probs,
                        const double* dout, double* dqkv) {
  // Heads of one sample write disjoint column blocks; samples write disjoint rows.
  const std::ptrdiff_t cells = static_cast<std::ptrdiff_t>(d.batch * d.heads);
  const bool par = attention_work(d) >= kParallelThreshold && cells > 1;
#pragma omp parallel if (par)
  {
    std::vector<double> dp(d.tokens);
#pragma omp for schedule(static)
    for (std::ptrdiff_t c = 0; c < cells; ++c) {
      const auto b = static_cast<std::size_t>(c) / d.heads;
      const auto h = static_cast<std::size_t>(c) % d.heads;
      attention_head_backward(d, b, h, qkv, probs, dout, dqkv, dp.data());
    }
  }
}

}  // namespace vpl::kernels
