#pragma once

#include <cstddef>
#include <vector>

#include "vpl/numcore/kernels.hpp"
#include "vpl/numcore/tape.hpp"

// Differentiable ops on Tape values. Matrices are rank-2 tensors; "row"
// operands are vectors matched against the trailing axis.

namespace vpl {

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
/// x (m x n) + v (n)
Var add_row(Var x, Var v);
Var scale(Var x, double s);
Var gelu(Var x);
Var sigmoid(Var x);
/// Softmax over the last axis.
Var softmax_rows(Var x);
Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-6);

/// Elementwise alpha*a + (1-alpha)*b with alpha a row vector of width n, or
/// a single element broadcast everywhere.
Var gate_mix(Var a, Var b, Var alpha);

/// Residual bottleneck: h + gelu(h*down_w + down_b)*up_w + up_b.
Var adapter(Var h, Var down_w, Var down_b, Var up_w, Var up_b);

/// Multi-head self-attention over packed qkv rows, (batch*tokens) x 3D.
Var self_attention(Var qkv, std::size_t batch, std::size_t tokens, std::size_t heads);

/// Output row r copies row `row` of `sources[source]`. All sources must share
/// the trailing width. Gradients scatter-add back.
struct RowRef {
  std::size_t source = 0;
  std::size_t row = 0;
};
Var gather_rows(const std::vector<Var>& sources, const std::vector<RowRef>& map);

/// Mean over consecutive groups of `group` rows: (g*group) x n -> g x n.
Var segment_mean(Var x, std::size_t group);

/// Sum of x (.) weights, a scalar; weights is a constant of x's shape.
Var weighted_sum(Var x, const Tensor& weights);

/// Mean negative log-softmax of the true class; logits is batch x classes.
Var cross_entropy(Var logits, const std::vector<std::size_t>& labels);

double gelu_value(double x);
double sigmoid_value(double x);

}  // namespace vpl
