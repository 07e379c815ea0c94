#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"
#include "vpl/numcore/error.hpp"
#include "vpl/numcore/parameter.hpp"
#include "vpl/numcore/tape.hpp"
#include "vpl/numcore/tensor.hpp"

using namespace vpl;

TEST(Tensor, ShapeAndData) {
  Tensor t({2, 3}, 1.5);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t[5], 1.5);
  EXPECT_THROW(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
  EXPECT_EQ(shape_string({2, 3}), "[2x3]");
}

TEST(Tensor, ReshapeKeepsDataAndChecksSize) {
  Tensor t = Tensor::matrix(2, 2, {1, 2, 3, 4});
  Tensor r = t.reshaped({4});
  EXPECT_EQ(r[3], 4.0);
  EXPECT_THROW(t.reshaped({3}), DimensionError);
}

TEST(Tensor, BitwiseEqualDistinguishesSignedZero) {
  Tensor a({1}, 0.0), b({1}, -0.0);
  EXPECT_FALSE(a.bitwise_equal(b));
  EXPECT_TRUE(a.bitwise_equal(Tensor({1}, 0.0)));
}

TEST(Softmax, SymmetricPair) {
  Tensor s = softmax(Tensor({2}, {0.0, 0.0}), 0);
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  EXPECT_DOUBLE_EQ(s[1], 0.5);
}

TEST(Softmax, ClosedForm) {
  Tensor s = softmax(Tensor({2}, {std::log(2.0), 0.0}), 0);
  EXPECT_NEAR(s[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(s[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, LargeLogitsStayFinite) {
  Tensor s = softmax(Tensor({2}, {1000.0, 0.0}), 0);
  EXPECT_TRUE(s.all_finite());
  EXPECT_EQ(s[0], 1.0);
  EXPECT_EQ(s[1], 0.0);
}

TEST(Softmax, RowsSumToOneOnRandomInputs) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Tensor x = fixtures::random_tensor({4, 7}, seed, -50.0, 50.0);
    for (std::size_t axis = 0; axis < 2; ++axis) {
      Tensor s = softmax(x, axis);
      const std::size_t outer = axis == 0 ? 7 : 4, n = axis == 0 ? 4 : 7;
      for (std::size_t o = 0; o < outer; ++o) {
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          sum += axis == 0 ? s.at(i, o) : s.at(o, i);
        }
        EXPECT_NEAR(sum, 1.0, 1e-12);
      }
    }
  }
}

TEST(Softmax, InvalidAxisThrows) { EXPECT_THROW(softmax(Tensor({2, 2}), 2), DimensionError); }

TEST(ParameterSet, RejectsDuplicatesAndTracksTrainable) {
  ParameterSet set;
  set.add("a", Tensor({2}), true);
  set.add("b", Tensor({3}), false);
  EXPECT_THROW(set.add("a", Tensor({1})), ConfigError);
  EXPECT_EQ(set.count(), 5u);
  EXPECT_EQ(set.trainable_count(), 2u);
  EXPECT_EQ(set.trainable_ids(), std::vector<std::string>{"a"});
  EXPECT_THROW(set.at("zzz"), ConfigError);
}

TEST(Tape, ChainRuleThroughSharedNode) {
  // f(x) = sum((x*x)) where the same node feeds both operands.
  Tape tape;
  Var x = tape.input(Tensor({3}, {1.0, -2.0, 0.5}));
  Var y = tape.record(Tensor({3}, {1.0, 4.0, 0.25}), {x, x}, [x](Tape& t, const Tensor& g) {
    Tensor& gx = t.grad_of(x);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += 2.0 * t.value(x)[i] * g[i];
  });
  Var loss = weighted_sum(y, Tensor({3}, 1.0));
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(tape.grad(x)[0], 2.0);
  EXPECT_DOUBLE_EQ(tape.grad(x)[1], -4.0);
  EXPECT_DOUBLE_EQ(tape.grad(x)[2], 1.0);
}

TEST(Tape, FrozenParameterIsAConstant) {
  Parameter w{"w", Tensor({1}, 3.0), Tensor(), false};
  Tape tape;
  Var v = tape.param(w);
  EXPECT_FALSE(tape.requires_grad(v));
  Var loss = weighted_sum(v, Tensor({1}, 1.0));
  tape.backward(loss);
  EXPECT_TRUE(w.grad.empty());
}

TEST(Tape, BackwardRequiresScalar) {
  Tape tape;
  Var x = tape.input(Tensor({2}, 1.0));
  EXPECT_THROW(tape.backward(x), DimensionError);
}

TEST(Tape, FiniteChecksRejectNaN) {
  const bool was = finite_checks_enabled();
  set_finite_checks(true);
  Tape tape;
  EXPECT_THROW(tape.input(Tensor({1}, std::nan(""))), NumericError);
  set_finite_checks(was);
}

TEST(GradCheck, ClosedFormLinearModel) {
  // y = w x, loss = y^2, w = 3, x = 1: d loss / dw = 2 w x^2 = 6.
  ParameterSet params;
  params.add("w", Tensor({1, 1}, 3.0));
  const Tensor x({1, 1}, 1.0);
  Tape tape;
  Var y = matmul(tape.constant(x), tape.param(params.at("w")));
  Var sq = matmul(y, y);  // 1x1 * 1x1 = y^2
  tape.backward(weighted_sum(sq, Tensor({1, 1}, 1.0)));
  EXPECT_DOUBLE_EQ(params.at("w").grad[0], 6.0);

  params.zero_grad();
  const GradCheckReport rep = grad_check(params, [&](Tape& t) {
    Var yy = matmul(t.constant(x), t.param(params.at("w")));
    return weighted_sum(matmul(yy, yy), Tensor({1, 1}, 1.0));
  });
  ASSERT_EQ(rep.params.size(), 1u);
  EXPECT_TRUE(rep.passed());
  EXPECT_LT(rep.params[0].max_rel_error, 1e-6);
  EXPECT_EQ(params.at("w").value[0], 3.0);
}

namespace {

// Residual bottleneck h + up(gelu(down(h))) whose backward into `up`
// deliberately has the wrong sign.
Var buggy_adapter(Var h, Var down, Var up) {
  Tape& t = *h.tape;
  Var mid = gelu(matmul(h, down));
  Tensor out = h.value();
  const Tensor delta = matmul(mid, t.constant(up.value())).value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += delta[i];
  return t.record(std::move(out), {h, mid, up}, [h, mid, up](Tape& tp, const Tensor& g) {
    if (tp.requires_grad(h)) {
      Tensor& gh = tp.grad_of(h);
      for (std::size_t i = 0; i < g.size(); ++i) gh[i] += g[i];
    }
    const Tensor& m = tp.value(mid);
    const Tensor& u = tp.value(up);
    if (tp.requires_grad(mid)) {
      Tensor& gm = tp.grad_of(mid);
      for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t k = 0; k < m.cols(); ++k)
          for (std::size_t c = 0; c < u.cols(); ++c) gm.at(r, k) += g.at(r, c) * u.at(k, c);
    }
    if (tp.requires_grad(up)) {
      Tensor& gu = tp.grad_of(up);
      for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t k = 0; k < m.cols(); ++k)
          for (std::size_t c = 0; c < u.cols(); ++c) gu.at(k, c) -= m.at(r, k) * g.at(r, c);  // wrong sign
    }
  });
}

}  // namespace

TEST(GradCheck, FlagsASignFlippedBackwardRule) {
  ParameterSet params;
  params.add("adapter.down.weight", fixtures::random_tensor({4, 2}, 1, -0.5, 0.5));
  params.add("adapter.up.weight", fixtures::random_tensor({2, 4}, 2, -0.5, 0.5));
  const Tensor x = fixtures::random_tensor({3, 4}, 3);
  const Tensor w = fixtures::random_tensor({3, 4}, 4);
  auto loss = [&](Tape& t) {
    return weighted_sum(buggy_adapter(t.constant(x), t.param(params.at("adapter.down.weight")),
                                      t.param(params.at("adapter.up.weight"))),
                        w);
  };
  const GradCheckReport rep = grad_check(params, loss);
  EXPECT_FALSE(rep.passed());
  EXPECT_EQ(rep.failures(), (std::vector<std::string>{"adapter.up.weight"}));
  EXPECT_TRUE(rep.find("adapter.down.weight")->passed);
  EXPECT_GT(rep.find("adapter.up.weight")->max_rel_error, 0.5);
}

TEST(GradCheck, FrozenParametersAreExcluded) {
  ParameterSet params;
  params.add("w", Tensor({1, 1}, 3.0), true);
  params.add("frozen", Tensor({1, 1}, 2.0), false);
  const GradCheckReport rep = grad_check(params, [&](Tape& t) {
    Var y = matmul(t.param(params.at("frozen")), t.param(params.at("w")));
    return weighted_sum(matmul(y, y), Tensor({1, 1}, 1.0));
  });
  EXPECT_EQ(rep.find("frozen"), nullptr);
  ASSERT_NE(rep.find("w"), nullptr);
  EXPECT_TRUE(rep.passed());
}

TEST(GradCheck, RelativeErrorUsesFloor) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-9 / 1e-6);
}
