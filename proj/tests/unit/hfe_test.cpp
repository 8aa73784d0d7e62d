#include "rfhit/hfe.h"

#include <gtest/gtest.h>

#include "gradcheck.h"
#include "model_helpers.h"
#include "rfhit/model.h"

namespace rfhit::hfe {
namespace {

using testing::grad_check;
using testing::probe_loss;
using testing::random_batch;
using testing::randomize_zero_params;

ag::Var param(Shape shape, uint64_t seed) {
  Rng rng(seed);
  return ag::Var(rng.normal_tensor(std::move(shape)), true);
}

TEST(Fuse, LerpProperties) {
  const ag::Var f = param({1, 2, 3, 4}, 1), c = param({1, 2, 3, 4}, 2);
  EXPECT_LT(max_abs_diff(fuse(f, c, ag::Var(Tensor({1}))).value(), (f.value() + c.value()) * 0.5), 1e-15);
  EXPECT_LT(max_abs_diff(fuse(f, c, ag::Var(Tensor({1}, -40.0))).value(), f.value()), 1e-12);
  EXPECT_LT(max_abs_diff(fuse(f, c, ag::Var(Tensor({1}, 40.0))).value(), c.value()), 1e-12);
  EXPECT_EQ(max_abs_diff(fuse(f, f, ag::Var(Tensor({1}, 0.7))).value(), f.value()), 0.0);
}

TEST(Fuse, AddIsSum) {
  const ag::Var f = param({1, 2, 3, 4}, 3), c = param({1, 2, 3, 4}, 4);
  EXPECT_EQ(max_abs_diff(fuse_add(f, c).value(), f.value() + c.value()), 0.0);
  EXPECT_THROW(fuse_add(f, param({1, 2, 3, 5}, 5)), std::invalid_argument);
}

TEST(Fuse, Gradient) {
  ag::Var f = param({1, 2, 2, 3}, 6), c = param({1, 2, 2, 3}, 7);
  ag::Var raw(Tensor({1}, 0.2), true);
  EXPECT_LT(grad_check([&] { return probe_loss(fuse(f, c, raw)); }, {f, c, raw}).max_rel_error, 1e-6);
}

TEST(Encoder, FeaturesMatchFlowMapShapes) {
  for (bool bottleneck : {true, false}) {
    ModelConfig c = preset("unit");
    c.fuse_bottleneck = bottleneck;
    const RfHitModel model(c, 8);
    const auto b = random_batch(c, 2, 9);
    const auto feats = model.encode(ag::Var(b.image));
    ASSERT_EQ(static_cast<int64_t>(feats.size()), bottleneck ? 3 : 2);
    for (size_t l = 0; l < feats.size(); ++l) {
      const Extent2 g = c.level_grid(static_cast<int64_t>(l));
      EXPECT_EQ(feats[l].shape(), (Shape{2, g.height, g.width, c.widths[l]}));
    }
  }
}

TEST(Encoder, ParameterCountsAreAdditive) {
  ModelConfig with = preset("tiny");
  ModelConfig without = with;
  without.hfe_enabled = false;
  const RfHitModel a(with, 1), b(without, 1);
  EXPECT_EQ(a.flow_parameter_count(), b.flow_parameter_count());
  EXPECT_EQ(b.encoder_parameter_count(), 0);
  EXPECT_GT(a.encoder_parameter_count(), 0);
  EXPECT_EQ(a.parameters().total_size(), a.flow_parameter_count() + a.encoder_parameter_count());
}

TEST(Encoder, AddModeHasNoCoefficients) {
  ModelConfig c = preset("unit");
  c.fusion = FusionMode::kAdd;
  const RfHitModel add(c, 1);
  c.fusion = FusionMode::kLerp;
  const RfHitModel lerp(c, 1);
  EXPECT_EQ(lerp.encoder_parameter_count() - add.encoder_parameter_count(), c.levels());
  EXPECT_EQ(add.parameters().find("hfe.fuse0.alpha"), nullptr);
}

TEST(Encoder, ImageOnlyAndUnconditioned) {
  const ModelConfig c = preset("unit");
  const RfHitModel model(c, 10);
  for (const auto& p : model.parameters().items()) {
    if (p.name.starts_with("hfe.")) EXPECT_EQ(p.name.find(".cond."), std::string::npos) << p.name;
  }
  const auto b = random_batch(c, 1, 11);
  const auto f1 = model.encode(ag::Var(b.image));
  const auto f2 = model.encode(ag::Var(b.image));
  for (size_t l = 0; l < f1.size(); ++l) EXPECT_EQ(max_abs_diff(f1[l].value(), f2[l].value()), 0.0);
}

TEST(Encoder, FusionChangesVelocity) {
  ModelConfig c = preset("unit");
  RfHitModel model(c, 12);
  randomize_zero_params(model.parameters(), 13);
  const auto b = random_batch(c, 1, 14);
  const ag::Var xt(b.xt), img(b.image);
  const auto feats = model.encode(img);
  const Tensor v = model.velocity(xt, b.t, img, feats).value();
  auto scaled = feats;
  scaled[1] = ag::Var(feats[1].value() * 2.0);
  EXPECT_GT(max_abs_diff(model.velocity(xt, b.t, img, scaled).value(), v), 1e-6);
  EXPECT_THROW(model.velocity(xt, b.t, img, hourglass::LevelFeatures{}), std::invalid_argument);
}

TEST(Encoder, FusionCoefficientsReceiveGradient) {
  for (uint64_t seed : {31u, 32u, 33u}) {
    RfHitModel model(preset("unit"), seed);
    randomize_zero_params(model.parameters(), seed + 100);
    // The lerp coefficients start at zero; put them back so the check is at init value.
    for (auto* a : {model.parameters().find("hfe.fuse0.alpha"), model.parameters().find("hfe.fuse1.alpha"),
                    model.parameters().find("hfe.fuse2.alpha")}) {
      ASSERT_NE(a, nullptr);
      a->var.mutable_value().fill(0.0);
    }
    const auto b = random_batch(model.config(), 2, seed);
    model.parameters().zero_grad();
    ag::backward(probe_loss(model.velocity(ag::Var(b.xt), b.t, ag::Var(b.image))));
    for (const auto& alpha : {"hfe.fuse0.alpha", "hfe.fuse1.alpha", "hfe.fuse2.alpha"}) {
      const auto* p = model.parameters().find(alpha);
      ASSERT_TRUE(p->var.has_grad()) << alpha;
      EXPECT_GT(std::abs(p->var.grad()[0]), 1e-12) << alpha << " seed " << seed;
    }
  }
}

TEST(Encoder, EncoderGradient) {
  RfHitModel model(preset("unit"), 40);
  randomize_zero_params(model.parameters(), 41);
  const auto b = random_batch(model.config(), 1, 42);
  std::vector<ag::Var> checked;
  for (const char* n : {"hfe.patch_in.weight", "hfe.enc0.block0.attn.qkv.weight", "hfe.merge1.weight",
                        "hfe.proj2.weight", "hfe.fuse1.alpha", "hfe.enc1.block0.norm_ffn.gain"}) {
    const auto* p = model.parameters().find(n);
    ASSERT_NE(p, nullptr) << n;
    checked.push_back(p->var);
  }
  const auto r = grad_check(
      [&] { return probe_loss(model.velocity(ag::Var(b.xt), b.t, ag::Var(b.image))); }, checked, 6);
  EXPECT_LT(r.max_rel_error, 1e-4);
}

}  // namespace
}  // namespace rfhit::hfe
