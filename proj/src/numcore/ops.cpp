#include "vpl/numcore/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "vpl/numcore/error.hpp"

namespace vpl {

namespace {

using kernels::Trans;

void require(bool ok, const std::string& what) {
  if (!ok) throw DimensionError(what);
}

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  require(a.same_shape(b), std::string(op) + ": shape " + shape_string(a.shape()) + " vs " +
                               shape_string(b.shape()));
}

void require_matrix(const Tensor& t, const char* op) {
  require(t.rank() == 2, std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
}

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Var matmul(Var a, Var b) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_matrix(av, "matmul");
  require_matrix(bv, "matmul");
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  require(bv.dim(0) == k, "matmul: inner dimensions differ, " + shape_string(av.shape()) +
                              " x " + shape_string(bv.shape()));
  Tensor out({m, n});
  kernels::gemm(Trans::kNo, Trans::kNo, m, n, k, av.raw(), bv.raw(), out.raw(), false);
  return a.tape->record(std::move(out), {a, b}, [a, b, m, n, k](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      kernels::gemm(Trans::kNo, Trans::kYes, m, k, n, g.raw(), t.value(b).raw(),
                    t.grad_of(a).raw(), true);
    }
    if (t.requires_grad(b)) {
      kernels::gemm(Trans::kYes, Trans::kNo, k, n, m, t.value(a).raw(), g.raw(),
                    t.grad_of(b).raw(), true);
    }
  });
}

Var add(Var a, Var b) {
  require_same(a.value(), b.value(), "add");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    for (Var v : {a, b}) {
      if (!t.requires_grad(v)) continue;
      Tensor& gv = t.grad_of(v);
      for (std::size_t i = 0; i < g.size(); ++i) gv[i] += g[i];
    }
  });
}

Var sub(Var a, Var b) {
  require_same(a.value(), b.value(), "sub");
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape& t, const Tensor& g) {
    if (t.requires_grad(a)) {
      Tensor& ga = t.grad_of(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor& gb = t.grad_of(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

Var add_row(Var x, Var v) {
  const Tensor& xv = x.value();
  const std::size_t n = xv.cols();
  require(v.value().size() == n, "add_row: row of " + std::to_string(v.value().size()) +
                                     " entries against width " + std::to_string(n));
  Tensor out = xv;
  const Tensor& vv = v.value();
  const std::size_t rows = xv.rows();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] += vv[c];
  return x.tape->record(std::move(out), {x, v}, [x, v, rows, n](Tape& t, const Tensor& g) {
    if (t.requires_grad(x)) {
      Tensor& gx = t.grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    }
    if (t.requires_grad(v)) {
      Tensor& gv = t.grad_of(v);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) gv[c] += g[r * n + c];
    }
  });
}

Var scale(Var x, double s) {
  Tensor out = x.value();
  for (auto& e : out.data()) e *= s;
  return x.tape->record(std::move(out), {x}, [x, s](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += s * g[i];
  });
}

Var gelu(Var x) {
  Tensor out = x.value();
  for (auto& e : out.data()) e = gelu_value(e);
  return x.tape->record(std::move(out), {x}, [x](Tape& t, const Tensor& g) {
    const Tensor& xv = t.value(x);
    Tensor& gx = t.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * gelu_grad(xv[i]);
  });
}

Var sigmoid(Var x) {
  Tensor out = x.value();
  for (auto& e : out.data()) e = sigmoid_value(e);
  Tensor y = out;
  return x.tape->record(std::move(out), {x}, [x, y](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
  });
}

Var softmax_rows(Var x) {
  const Tensor& xv = x.value();
  require(xv.rank() >= 1, "softmax_rows: rank-0 input");
  Tensor out = softmax(xv, xv.rank() - 1);
  Tensor y = out;
  const std::size_t rows = xv.rows(), n = xv.cols();
  return x.tape->record(std::move(out), {x}, [x, y, rows, n](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_of(x);
    for (std::size_t r = 0; r < rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += g[r * n + c] * y[r * n + c];
      for (std::size_t c = 0; c < n; ++c) gx[r * n + c] += y[r * n + c] * (g[r * n + c] - dot);
    }
  });
}

Var layer_norm(Var x, Var gain, Var bias, double eps) {
  const Tensor& xv = x.value();
  const std::size_t rows = xv.rows(), n = xv.cols();
  require(gain.value().size() == n && bias.value().size() == n,
          "layer_norm: gain/bias must have " + std::to_string(n) + " entries");
  Tensor out(xv.shape());
  Tensor xhat(xv.shape());
  std::vector<double> rstd(rows);
  const Tensor& gv = gain.value();
  const Tensor& bv = bias.value();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv.raw() + r * n;
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += row[c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mean) * (row[c] - mean);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mean) * rstd[r];
      xhat[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  return x.tape->record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat, rstd, rows, n](Tape& t, const Tensor& g) {
        const Tensor& gv = t.value(gain);
        if (t.requires_grad(x)) {
          Tensor& gx = t.grad_of(x);
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t r = 0; r < rows; ++r) {
            double sum_d = 0.0, sum_dh = 0.0;
            for (std::size_t c = 0; c < n; ++c) {
              const double d = g[r * n + c] * gv[c];
              sum_d += d;
              sum_dh += d * xhat[r * n + c];
            }
            for (std::size_t c = 0; c < n; ++c) {
              const double d = g[r * n + c] * gv[c];
              gx[r * n + c] += rstd[r] * (d - inv_n * sum_d - xhat[r * n + c] * inv_n * sum_dh);
            }
          }
        }
        if (t.requires_grad(gain)) {
          Tensor& gg = t.grad_of(gain);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < n; ++c) gg[c] += g[r * n + c] * xhat[r * n + c];
        }
        if (t.requires_grad(bias)) {
          Tensor& gb = t.grad_of(bias);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
        }
      });
}

Var gate_mix(Var a, Var b, Var alpha) {
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  const Tensor& al = alpha.value();
  require_same(av, bv, "gate_mix");
  const std::size_t n = av.cols(), rows = av.rows();
  const bool broadcast = al.size() == 1;
  require(broadcast || al.size() == n, "gate_mix: gate width " + std::to_string(al.size()) +
                                           " does not match feature width " + std::to_string(n));
  Tensor out(av.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t i = r * n + c;
      const double w = broadcast ? al[0] : al[c];
      // Equal inputs pass through unchanged for any gate value.
      out[i] = av[i] == bv[i] ? av[i] : w * av[i] + (1.0 - w) * bv[i];
    }
  }
  return a.tape->record(
      std::move(out), {a, b, alpha}, [a, b, alpha, rows, n, broadcast](Tape& t, const Tensor& g) {
        const Tensor& av = t.value(a);
        const Tensor& bv = t.value(b);
        const Tensor& al = t.value(alpha);
        auto w = [&](std::size_t c) { return broadcast ? al[0] : al[c]; };
        if (t.requires_grad(a)) {
          Tensor& ga = t.grad_of(a);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < n; ++c) ga[r * n + c] += w(c) * g[r * n + c];
        }
        if (t.requires_grad(b)) {
          Tensor& gb = t.grad_of(b);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < n; ++c) gb[r * n + c] += (1.0 - w(c)) * g[r * n + c];
        }
        if (t.requires_grad(alpha)) {
          Tensor& gal = t.grad_of(alpha);
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t c = 0; c < n; ++c) {
              const std::size_t i = r * n + c;
              gal[broadcast ? 0 : c] += g[i] * (av[i] - bv[i]);
            }
          }
        }
      });
}

Var adapter(Var h, Var down_w, Var down_b, Var up_w, Var up_b) {
  const Tensor& hv = h.value();
  const Tensor& dw = down_w.value();
  const Tensor& uw = up_w.value();
  const std::size_t m = hv.rows(), d = hv.cols();
  require_matrix(dw, "adapter");
  require_matrix(uw, "adapter");
  const std::size_t r = dw.dim(1);
  require(r >= 1, "adapter: bottleneck width must be >= 1");
  require(dw.dim(0) == d && uw.dim(0) == r && uw.dim(1) == d && down_b.value().size() == r &&
              up_b.value().size() == d,
          "adapter: weights do not match width " + std::to_string(d) + " and bottleneck " +
              std::to_string(r));
  Tensor z({m, r});
  kernels::gemm(Trans::kNo, Trans::kNo, m, r, d, hv.raw(), dw.raw(), z.raw(), false);
  const Tensor& db = down_b.value();
  Tensor act({m, r});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < r; ++j) {
      z[i * r + j] += db[j];
      act[i * r + j] = gelu_value(z[i * r + j]);
    }
  }
  Tensor out({m, d});
  kernels::gemm(Trans::kNo, Trans::kNo, m, d, r, act.raw(), uw.raw(), out.raw(), false);
  const Tensor& ub = up_b.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] += hv[i * d + j] + ub[j];
  out = out.reshaped(hv.shape());
  return h.tape->record(
      std::move(out), {h, down_w, down_b, up_w, up_b},
      [h, down_w, down_b, up_w, up_b, z, act, m, d, r](Tape& t, const Tensor& g) {
        if (t.requires_grad(up_w)) {
          kernels::gemm(Trans::kYes, Trans::kNo, r, d, m, act.raw(), g.raw(),
                        t.grad_of(up_w).raw(), true);
        }
        if (t.requires_grad(up_b)) {
          Tensor& gb = t.grad_of(up_b);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < d; ++j) gb[j] += g[i * d + j];
        }
        const bool need_dz = t.requires_grad(h) || t.requires_grad(down_w) ||
                             t.requires_grad(down_b);
        if (!need_dz) return;
        Tensor dz({m, r});
        kernels::gemm(Trans::kNo, Trans::kYes, m, r, d, g.raw(), t.value(up_w).raw(), dz.raw(),
                      false);
        for (std::size_t i = 0; i < m * r; ++i) dz[i] *= gelu_grad(z[i]);
        if (t.requires_grad(down_w)) {
          kernels::gemm(Trans::kYes, Trans::kNo, d, r, m, t.value(h).raw(), dz.raw(),
                        t.grad_of(down_w).raw(), true);
        }
        if (t.requires_grad(down_b)) {
          Tensor& gb = t.grad_of(down_b);
          for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < r; ++j) gb[j] += dz[i * r + j];
        }
        if (t.requires_grad(h)) {
          Tensor& gh = t.grad_of(h);
          for (std::size_t i = 0; i < g.size(); ++i) gh[i] += g[i];
          kernels::gemm(Trans::kNo, Trans::kYes, m, d, r, dz.raw(), t.value(down_w).raw(),
                        gh.raw(), true);
        }
      });
}

Var self_attention(Var qkv, std::size_t batch, std::size_t tokens, std::size_t heads) {
  const Tensor& qv = qkv.value();
  require_matrix(qv, "self_attention");
  require(qv.cols() % 3 == 0, "self_attention: packed width must be a multiple of 3");
  kernels::AttentionDims dims{batch, tokens, heads, qv.cols() / 3};
  require(heads >= 1 && dims.dim % heads == 0,
          "self_attention: width " + std::to_string(dims.dim) + " not divisible by " +
              std::to_string(heads) + " heads");
  require(qv.rows() == batch * tokens, "self_attention: expected " +
                                           std::to_string(batch * tokens) + " rows, got " +
                                           std::to_string(qv.rows()));
  Tensor out({batch * tokens, dims.dim});
  Tensor probs({dims.prob_size()});
  kernels::attention_forward(dims, qv.raw(), out.raw(), probs.raw());
  return qkv.tape->record(std::move(out), {qkv}, [qkv, dims, probs](Tape& t, const Tensor& g) {
    kernels::attention_backward(dims, t.value(qkv).raw(), probs.raw(), g.raw(),
                                t.grad_of(qkv).raw());
  });
}

Var gather_rows(const std::vector<Var>& sources, const std::vector<RowRef>& map) {
  require(!sources.empty(), "gather_rows: no sources");
  const std::size_t n = sources.front().value().cols();
  for (Var s : sources) {
    require(s.value().cols() == n, "gather_rows: sources differ in width");
  }
  Tensor out({map.size(), n});
  for (std::size_t r = 0; r < map.size(); ++r) {
    const auto [src, row] = map[r];
    require(src < sources.size() && row < sources[src].value().rows(),
            "gather_rows: row reference out of range");
    const double* from = sources[src].value().raw() + row * n;
    std::copy(from, from + n, out.raw() + r * n);
  }
  Tape* tape = sources.front().tape;
  return tape->record(std::move(out), sources, [sources, map, n](Tape& t, const Tensor& g) {
    for (std::size_t r = 0; r < map.size(); ++r) {
      const auto [src, row] = map[r];
      if (!t.requires_grad(sources[src])) continue;
      double* to = t.grad_of(sources[src]).raw() + row * n;
      for (std::size_t c = 0; c < n; ++c) to[c] += g[r * n + c];
    }
  });
}

Var segment_mean(Var x, std::size_t group) {
  const Tensor& xv = x.value();
  require(group >= 1 && xv.rows() % group == 0,
          "segment_mean: " + std::to_string(xv.rows()) + " rows not divisible into groups of " +
              std::to_string(group));
  const std::size_t groups = xv.rows() / group, n = xv.cols();
  const double inv = 1.0 / static_cast<double>(group);
  Tensor out({groups, n});
  for (std::size_t gi = 0; gi < groups; ++gi) {
    for (std::size_t r = 0; r < group; ++r)
      for (std::size_t c = 0; c < n; ++c) out[gi * n + c] += xv[(gi * group + r) * n + c];
    for (std::size_t c = 0; c < n; ++c) out[gi * n + c] *= inv;
  }
  return x.tape->record(std::move(out), {x}, [x, group, groups, n, inv](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_of(x);
    for (std::size_t gi = 0; gi < groups; ++gi)
      for (std::size_t r = 0; r < group; ++r)
        for (std::size_t c = 0; c < n; ++c) gx[(gi * group + r) * n + c] += inv * g[gi * n + c];
  });
}

Var weighted_sum(Var x, const Tensor& weights) {
  require_same(x.value(), weights, "weighted_sum");
  double s = 0.0;
  const Tensor& xv = x.value();
  for (std::size_t i = 0; i < xv.size(); ++i) s += xv[i] * weights[i];
  return x.tape->record(Tensor::scalar(s), {x}, [x, weights](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_of(x);
    for (std::size_t i = 0; i < weights.size(); ++i) gx[i] += g[0] * weights[i];
  });
}

Var cross_entropy(Var logits, const std::vector<std::size_t>& labels) {
  const Tensor& lv = logits.value();
  require_matrix(lv, "cross_entropy");
  const std::size_t b = lv.dim(0), k = lv.dim(1);
  require(labels.size() == b, "cross_entropy: " + std::to_string(labels.size()) +
                                  " labels for a batch of " + std::to_string(b));
  Tensor probs = softmax(lv, 1);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    require(labels[i] < k, "cross_entropy: label " + std::to_string(labels[i]) +
                               " out of range for " + std::to_string(k) + " classes");
    const double* row = lv.raw() + i * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += std::exp(row[c] - mx);
    loss += (mx + std::log(sum)) - row[labels[i]];
  }
  loss /= static_cast<double>(b);
  return logits.tape->record(Tensor::scalar(loss), {logits},
                             [logits, probs, labels, b, k](Tape& t, const Tensor& g) {
                               Tensor& gl = t.grad_of(logits);
                               const double s = g[0] / static_cast<double>(b);
                               for (std::size_t i = 0; i < b; ++i) {
                                 for (std::size_t c = 0; c < k; ++c) {
                                   const double target = c == labels[i] ? 1.0 : 0.0;
                                   gl[i * k + c] += s * (probs[i * k + c] - target);
                                 }
                               }
                             });
}

}  // namespace vpl
