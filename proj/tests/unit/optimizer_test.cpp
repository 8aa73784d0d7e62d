#include "rfhit/optimizer.h"

#include <cmath>

#include <gtest/gtest.h>

namespace rfhit::optim {
namespace {

TEST(Schedule, WarmupThenCosine) {
  const Schedule s = Schedule::make(1e-4, 1000, 0.01);
  EXPECT_EQ(s.warmup_steps, 10);
  EXPECT_EQ(s.lr_at(0), 0.0);
  EXPECT_DOUBLE_EQ(s.lr_at(5), 0.5e-4);
  EXPECT_DOUBLE_EQ(s.lr_at(10), 1e-4);
  EXPECT_NEAR(s.lr_at(505), 0.5e-4, 1e-18);
  EXPECT_NEAR(s.lr_at(1000), 0.0, 1e-20);
  EXPECT_THROW(s.lr_at(1001), std::out_of_range);
  EXPECT_THROW(s.lr_at(-1), std::out_of_range);
}

TEST(Schedule, ContinuousAtWarmupJunctionAndMonotone) {
  const Schedule s = Schedule::make(1e-3, 300, 0.1);
  ASSERT_EQ(s.warmup_steps, 30);
  EXPECT_NEAR(s.lr_at(29), s.lr_at(30), 1e-3 / 30 + 1e-12);
  EXPECT_NEAR(s.lr_at(31), s.lr_at(30), 1e-6);
  for (int64_t k = 1; k <= 30; ++k) EXPECT_GT(s.lr_at(k), s.lr_at(k - 1));
  for (int64_t k = 31; k <= 300; ++k) EXPECT_LE(s.lr_at(k), s.lr_at(k - 1));
  for (int64_t k = 0; k <= 300; ++k) EXPECT_GE(s.lr_at(k), 0.0);
}

TEST(Schedule, TinyRunsKeepAWarmupStep) {
  EXPECT_EQ(Schedule::make(1e-4, 10, 0.01).warmup_steps, 1);
  EXPECT_EQ(Schedule::make(1e-4, 10, 0.0).warmup_steps, 0);
  EXPECT_EQ(Schedule::make(1e-4, 1, 0.5).warmup_steps, 0);
  EXPECT_THROW(Schedule::make(1e-4, 0, 0.01), std::invalid_argument);
}

struct Fixture {
  nn::ParameterStore store;
  ag::Var w, g, b;
  Fixture() {
    w = store.add("w", Tensor({2, 2}, {1.0, -2.0, 0.5, 4.0}), nn::ParamRole::kWeight);
    g = store.add("g", Tensor({1, 2}, {0.3, -0.3}), nn::ParamRole::kGain);
    b = store.add("b", Tensor({2}, {1.0, 1.0}), nn::ParamRole::kBias);
  }
};

TEST(AdamW, DecayIsDecoupled) {
  Fixture f;
  AdamW opt(f.store, {0.9, 0.999, 1e-8, 1e-2});
  const Tensor before = f.w.value();
  opt.step(f.store, 0.5);
  for (int64_t i = 0; i < 4; ++i) EXPECT_EQ(f.w.value()[i], before[i] - 0.5 * 1e-2 * before[i]);
  EXPECT_EQ(f.g.value()[0], 0.3);
  EXPECT_EQ(f.b.value()[1], 1.0);
  EXPECT_EQ(opt.steps_taken(), 1);
}

TEST(AdamW, ZeroRateLeavesParametersUnchanged) {
  Fixture f;
  f.w.node()->grad = Tensor({2, 2}, 1.0);
  AdamW opt(f.store, {});
  const Tensor before = f.w.value();
  opt.step(f.store, 0.0);
  EXPECT_EQ(max_abs_diff(f.w.value(), before), 0.0);
}

TEST(AdamW, MatchesHandComputedUpdates) {
  Fixture f;
  const AdamWOptions o{0.9, 0.999, 1e-8, 0.0};
  AdamW opt(f.store, o);
  const std::vector<double> grads1 = {0.5, -1.0, 2.0, 0.0}, grads2 = {-0.25, 1.0, 1.0, 3.0};
  std::vector<double> w(f.w.value().values().begin(), f.w.value().values().end()), m(4, 0.0), v(4, 0.0);
  int t = 0;
  for (const auto& gr : {grads1, grads2}) {
    f.w.node()->grad = Tensor({2, 2}, gr);
    opt.step(f.store, 0.01);
    ++t;
    for (size_t i = 0; i < 4; ++i) {
      m[i] = 0.9 * m[i] + 0.1 * gr[i];
      v[i] = 0.999 * v[i] + 0.001 * gr[i] * gr[i];
      const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
      w[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    }
  }
  for (size_t i = 0; i < 4; ++i) EXPECT_NEAR(f.w.value()[static_cast<int64_t>(i)], w[i], 1e-15);
}

TEST(GradClip, ScalesToMaxNorm) {
  Fixture f;
  f.w.node()->grad = Tensor({2, 2}, {3.0, 0.0, 0.0, 0.0});
  f.b.node()->grad = Tensor({2}, {4.0, 0.0});
  EXPECT_DOUBLE_EQ(global_grad_norm(f.store), 5.0);
  EXPECT_DOUBLE_EQ(clip_grad_norm(f.store, 1.0), 5.0);
  EXPECT_NEAR(global_grad_norm(f.store), 1.0, 1e-15);
  EXPECT_NEAR(f.w.grad()[0], 0.6, 1e-15);
  clip_grad_norm(f.store, 10.0);
  EXPECT_NEAR(f.w.grad()[0], 0.6, 1e-15);
  f.b.node()->grad = Tensor({2}, {400.0, 0.0});
  clip_grad_norm(f.store, 0.0);
  EXPECT_EQ(f.b.grad()[0], 400.0);
}

}  // namespace
}  // namespace rfhit::optim
