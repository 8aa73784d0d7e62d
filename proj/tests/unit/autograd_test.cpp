#include "rfhit/autograd.h"

#include <cmath>

#include <gtest/gtest.h>

#include "gradcheck.h"
#include "rfhit/cost_counter.h"
#include "rfhit/random.h"

namespace rfhit::ag {
namespace {

using testing::grad_check;
using testing::probe_loss;

Var param(Shape shape, uint64_t seed) {
  Rng rng(seed);
  return Var(rng.normal_tensor(std::move(shape)), true);
}

TEST(Autograd, LinearMatchesHandComputation) {
  Var x(Tensor({1, 2}, {1, 2}));
  Var w(Tensor({2, 3}, {1, 0, -1, 2, 1, 0}));
  Var b(Tensor({3}, {0.5, 0.5, 0.5}));
  const Tensor y = linear(x, w, b).value();
  EXPECT_EQ(y.shape(), (Shape{1, 3}));
  EXPECT_DOUBLE_EQ(y[0], 5.5);
  EXPECT_DOUBLE_EQ(y[1], 2.5);
  EXPECT_DOUBLE_EQ(y[2], -0.5);
}

TEST(Autograd, LinearCountsMacs) {
  CostCounter c;
  ScopedCostCounter scope(c);
  linear(Var(Tensor({5, 3})), Var(Tensor({3, 4})));
  EXPECT_EQ(c.macs, 5 * 3 * 4);
}

TEST(Autograd, LinearGradient) {
  Var x = param({2, 3, 3, 4}, 1), w = param({4, 5}, 2), b = param({5}, 3);
  const auto r = grad_check([&] { return probe_loss(linear(x, w, b)); }, {x, w, b});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(Autograd, ElementwiseGradients) {
  Var a = param({3, 4}, 4), b = param({3, 4}, 5);
  EXPECT_LT(grad_check([&] { return probe_loss(mul(add(a, b), sub(a, b))); }, {a, b}).max_rel_error, 1e-6);
  EXPECT_LT(grad_check([&] { return probe_loss(scale(a, -2.5)); }, {a}).max_rel_error, 1e-6);
}

TEST(Autograd, GegluGradient) {
  Var x = param({2, 8}, 6);
  EXPECT_EQ(geglu(x).shape(), (Shape{2, 4}));
  EXPECT_LT(grad_check([&] { return probe_loss(geglu(x)); }, {x}).max_rel_error, 1e-6);
}

TEST(Autograd, LerpGradientIncludesCoefficient) {
  Var x = param({2, 3}, 7), y = param({2, 3}, 8);
  Var raw(Tensor({1}, {0.3}), true);
  EXPECT_LT(grad_check([&] { return probe_loss(lerp(x, y, raw)); }, {x, y, raw}).max_rel_error, 1e-6);
}

TEST(Autograd, LerpAtZeroRawIsMidpoint) {
  Var x(Tensor({2}, {0.0, 2.0})), y(Tensor({2}, {4.0, 2.0}));
  const Tensor m = lerp(x, y, Var(Tensor({1}))).value();
  EXPECT_DOUBLE_EQ(m[0], 2.0);
  EXPECT_DOUBLE_EQ(m[1], 2.0);
  EXPECT_DOUBLE_EQ(squash(0.0), 0.5);
}

TEST(Autograd, SpaceToDepthRoundTrip) {
  Rng rng(9);
  const Tensor x = rng.normal_tensor({2, 4, 6, 3});
  const Tensor s = space_to_depth(x, 2, 3);
  EXPECT_EQ(s.shape(), (Shape{2, 2, 2, 18}));
  EXPECT_EQ(max_abs_diff(depth_to_space(s, 2, 3), x), 0.0);
  // Channel order is (dy, dx, c).
  EXPECT_EQ(s[1 * 3 + 2], x.at(0, 2, 0, 1));
  EXPECT_EQ(s[(1 * 3 + 0) * 3 + 1], x.at(0, 1, 1, 0));
}

TEST(Autograd, RearrangeGradients) {
  Var x = param({1, 4, 4, 2}, 10);
  EXPECT_LT(grad_check([&] { return probe_loss(space_to_depth(x, 2, 2)); }, {x}).max_rel_error, 1e-5);
  Var y = param({1, 2, 2, 8}, 11);
  EXPECT_LT(grad_check([&] { return probe_loss(depth_to_space(y, 2, 2)); }, {y}).max_rel_error, 1e-5);
}

TEST(Autograd, ConcatChannelsGradient) {
  Var a = param({1, 2, 2, 3}, 12), b = param({1, 2, 2, 1}, 13);
  const Var c = concat_channels(a, b);
  EXPECT_EQ(c.shape(), (Shape{1, 2, 2, 4}));
  EXPECT_EQ(c.value().at(0, 3, 1, 1), b.value().at(0, 0, 1, 1));
  EXPECT_LT(grad_check([&] { return probe_loss(concat_channels(a, b)); }, {a, b}).max_rel_error, 1e-6);
}

TEST(Autograd, SharedSubexpressionAccumulates) {
  Var a(Tensor({1}, {3.0}), true);
  const Var y = mul(a, a);  // dy/da = 2a
  backward(y);
  EXPECT_DOUBLE_EQ(a.grad()[0], 6.0);
}

TEST(Autograd, NoGradGuardSkipsGraph) {
  Var a(Tensor({1}, {1.0}), true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    EXPECT_FALSE(add(a, a).requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(add(a, a).requires_grad());
}

TEST(Autograd, BackwardNeedsScalar) {
  Var a(Tensor({2}), true);
  EXPECT_THROW(backward(a), std::invalid_argument);
}

}  // namespace
}  // namespace rfhit::ag
