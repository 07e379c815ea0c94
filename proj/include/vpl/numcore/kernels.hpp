#pragma once

#include <cstddef>

// Dense compute kernels. Each kernel has a serial reference in
// vpl::kernels::serial and an OpenMP version in vpl::kernels. Both compute
// every output element with the same summation order, so results agree
// bitwise regardless of thread count.

namespace vpl::kernels {

enum class Trans { kNo, kYes };

struct AttentionDims {
  std::size_t batch = 0;
  std::size_t tokens = 0;
  std::size_t heads = 0;
  std::size_t dim = 0;  // model width D; head width is dim / heads

  std::size_t head_dim() const { return dim / heads; }
  std::size_t prob_size() const { return batch * heads * tokens * tokens; }
};

namespace serial {

/// C (m x n) = op(A) * op(B), or C += ... when `accumulate`.
/// op(A) is m x k, op(B) is k x n. Storage is row-major for the
/// untransposed operand.
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);

/// Multi-head softmax attention over a packed [q | k | v] row layout.
/// qkv is (batch*tokens) x 3*dim; out is (batch*tokens) x dim; probs
/// receives the batch*heads*tokens*tokens attention weights.
void attention_forward(const AttentionDims& d, const double* qkv, double* out, double* probs);

/// Accumulates into dqkv.
void attention_backward(const AttentionDims& d, const double* qkv, const double* probs,
                        const double* dout, double* dqkv);

}  // namespace serial

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k,
          const double* a, const double* b, double* c, bool accumulate);

void attention_forward(const AttentionDims& d, const double* qkv, double* out, double* probs);

void attention_backward(const AttentionDims& d, const double* qkv, const double* probs,
                        const double* dout, double* dqkv);

/// Work (multiply-adds) below which the OpenMP kernels stay serial.
inline constexpr std::size_t kParallelThreshold = 1u << 15;

}  // namespace vpl::kernels
