#include "rfhit/attention.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "gradcheck.h"
#include "rfhit/random.h"

namespace rfhit::attention {
namespace {

using testing::grad_check;
using testing::probe_loss;

ag::Var param(Shape shape, uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  return ag::Var(rng.normal_tensor(std::move(shape)) * scale, true);
}

AttentionParams make_params(int64_t width, int64_t heads, int64_t kernel, bool rope, uint64_t seed) {
  AttentionParams p;
  p.width = width;
  p.heads = heads;
  p.kernel = kernel;
  p.rope = rope;
  const double s = 1.0 / std::sqrt(static_cast<double>(width));
  p.qkv_weight = param({width, 3 * width}, seed, s);
  p.out_weight = param({width, width}, seed + 1, s);
  return p;
}

double dot_at(const Tensor& a, int64_t ay, int64_t ax, const Tensor& b, int64_t by, int64_t bx) {
  const int64_t c = a.channels();
  double d = 0;
  for (int64_t i = 0; i < c; ++i) d += a[(ay * a.width() + ax) * c + i] * b[(by * b.width() + bx) * c + i];
  return d;
}

// Direct evaluation of windowed attention for rope-free layers: explicit
// window bounds, scores, softmax and weighted sum for every query.
Tensor brute_force_attention(const Tensor& x, const AttentionParams& p) {
  const int64_t B = x.batch(), H = x.height(), W = x.width(), C = p.width, d = p.head_dim();
  const Tensor& wqkv = p.qkv_weight.value();
  const Tensor& wo = p.out_weight.value();
  const int64_t T = H * W;
  std::vector<double> qkv(static_cast<size_t>(B * T * 3 * C), 0.0);
  for (int64_t t = 0; t < B * T; ++t)
    for (int64_t o = 0; o < 3 * C; ++o)
      for (int64_t i = 0; i < C; ++i) qkv[t * 3 * C + o] += x[t * C + i] * wqkv[i * 3 * C + o];
  auto window = [&](int64_t i, int64_t n) {
    if (p.kernel == kGlobal || p.kernel >= n) return std::pair<int64_t, int64_t>{0, n};
    const int64_t start = std::clamp<int64_t>(i - p.kernel / 2, 0, n - p.kernel);
    return std::pair<int64_t, int64_t>{start, start + p.kernel};
  };
  std::vector<double> heads_out(static_cast<size_t>(B * T * C), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < p.heads; ++h)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x0 = 0; x0 < W; ++x0) {
          const int64_t qi = b * T + y * W + x0;
          const auto [y0, y1] = window(y, H);
          const auto [xa, xb] = window(x0, W);
          std::vector<double> s;
          std::vector<int64_t> keys;
          for (int64_t ky = y0; ky < y1; ++ky)
            for (int64_t kx = xa; kx < xb; ++kx) {
              const int64_t ki = b * T + ky * W + kx;
              double acc = 0;
              for (int64_t j = 0; j < d; ++j) acc += qkv[qi * 3 * C + h * d + j] * qkv[ki * 3 * C + C + h * d + j];
              s.push_back(acc / std::sqrt(static_cast<double>(d)));
              keys.push_back(ki);
            }
          const double m = *std::max_element(s.begin(), s.end());
          double z = 0;
          for (double& v : s) z += (v = std::exp(v - m));
          for (size_t n = 0; n < keys.size(); ++n)
            for (int64_t j = 0; j < d; ++j)
              heads_out[qi * C + h * d + j] += s[n] / z * qkv[keys[n] * 3 * C + 2 * C + h * d + j];
        }
  Tensor out(x.shape());
  for (int64_t t = 0; t < B * T; ++t)
    for (int64_t o = 0; o < C; ++o)
      for (int64_t i = 0; i < C; ++i) out[t * C + o] += heads_out[t * C + i] * wo[i * C + o];
  return out;
}

TEST(AxisWindow, ShiftsInwardAtBorders) {
  EXPECT_EQ(axis_window(0, 10, 5).start, 0);
  EXPECT_EQ(axis_window(1, 10, 5).start, 0);
  EXPECT_EQ(axis_window(4, 10, 5).start, 2);
  EXPECT_EQ(axis_window(9, 10, 5).start, 5);
  for (int64_t i = 0; i < 10; ++i) EXPECT_EQ(axis_window(i, 10, 5).length, 5);
}

TEST(AxisWindow, ClampsToExtentAndGlobal) {
  EXPECT_EQ(axis_window(2, 3, 7).start, 0);
  EXPECT_EQ(axis_window(2, 3, 7).length, 3);
  EXPECT_EQ(axis_window(5, 8, kGlobal).length, 8);
  EXPECT_EQ(window_size(14, 14, 13), 169);
  EXPECT_EQ(window_size(56, 56, 9), 81);
  EXPECT_EQ(window_size(4, 6, 5), 20);
  EXPECT_EQ(window_size(4, 6, kGlobal), 24);
}

TEST(AdaRmsNorm, UnitRmsWithZeroScale) {
  const ag::Var x = param({2, 3, 3, 8}, 1, 3.0);
  const Tensor y = ada_rms_norm(x, ag::Var(Tensor({1, 8}))).value();
  for (int64_t t = 0; t < 18; ++t) {
    double ms = 0;
    for (int64_t c = 0; c < 8; ++c) ms += y[t * 8 + c] * y[t * 8 + c] / 8;
    EXPECT_NEAR(ms, 1.0, 1e-5);
  }
}

TEST(AdaRmsNorm, ScaleInvariantAndChannelScaled) {
  const ag::Var x = param({2, 2, 2, 4}, 2);
  Tensor s({2, 4}, {0.5, -0.5, 1.0, 0.0, 0.1, 0.2, 0.3, 0.4});
  const Tensor y = ada_rms_norm(x, ag::Var(s)).value();
  const Tensor y7 = ada_rms_norm(ag::Var(x.value() * 7.0), ag::Var(s)).value();
  EXPECT_LT(max_abs_diff(y, y7), 1e-5);
  const Tensor base = ada_rms_norm(x, ag::Var(Tensor({1, 4}))).value();
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t t = 0; t < 4; ++t)
      for (int64_t c = 0; c < 4; ++c) {
        const int64_t i = (b * 4 + t) * 4 + c;
        EXPECT_NEAR(y[i], base[i] * (1 + s[b * 4 + c]), 1e-12);
      }
}

TEST(AdaRmsNorm, CountsNormElements) {
  CostCounter c;
  ScopedCostCounter scope(c);
  ada_rms_norm(ag::Var(Tensor({2, 3, 3, 8}, 1.0)), ag::Var(Tensor({1, 8})));
  EXPECT_EQ(c.norm_elements, 2 * 9 * 8);
}

TEST(AdaRmsNorm, Gradient) {
  ag::Var x = param({2, 2, 3, 4}, 3), s = param({2, 4}, 4, 0.3);
  EXPECT_LT(grad_check([&] { return probe_loss(ada_rms_norm(x, s)); }, {x, s}).max_rel_error, 1e-5);
}

TEST(Rope, IdentityAtOrigin) {
  const Tensor x = Rng(5).normal_tensor({1, 3, 4, 16});
  const Tensor r = axial_rope(x, 2);
  for (int64_t c = 0; c < 16; ++c) EXPECT_EQ(r[c], x[c]);
  EXPECT_GT(max_abs_diff(r, x), 1e-3);
}

TEST(Rope, PreservesPerHeadNorm) {
  const Tensor x = Rng(6).normal_tensor({2, 4, 5, 16});
  const Tensor r = axial_rope(x, 2);
  for (int64_t t = 0; t < 2 * 20; ++t)
    for (int64_t h = 0; h < 2; ++h) {
      double a = 0, b = 0;
      for (int64_t j = 0; j < 8; ++j) {
        a += x[t * 16 + h * 8 + j] * x[t * 16 + h * 8 + j];
        b += r[t * 16 + h * 8 + j] * r[t * 16 + h * 8 + j];
      }
      EXPECT_NEAR(a, b, 1e-10);
    }
}

TEST(Rope, ScoresDependOnRelativeOffsetOnly) {
  Rng rng(7);
  const Tensor qv = rng.normal_tensor({8}), kv = rng.normal_tensor({8});
  Tensor q({1, 7, 7, 8}), k({1, 7, 7, 8});
  for (int64_t t = 0; t < 49; ++t)
    for (int64_t j = 0; j < 8; ++j) {
      q[t * 8 + j] = qv[j];
      k[t * 8 + j] = kv[j];
    }
  const Tensor rq = axial_rope(q, 1), rk = axial_rope(k, 1);
  const double ref = dot_at(rq, 1, 2, rk, 3, 1);
  EXPECT_NEAR(dot_at(rq, 3, 5, rk, 5, 4), ref, 1e-10);
  EXPECT_NEAR(dot_at(rq, 4, 3, rk, 6, 2), ref, 1e-10);
  EXPECT_GT(std::abs(dot_at(rq, 1, 2, rk, 1, 2) - ref), 1e-6);
}

TEST(Rope, TensorAndVarAgree) {
  const Tensor x = Rng(8).normal_tensor({1, 3, 3, 8});
  EXPECT_EQ(max_abs_diff(axial_rope(x, 2), axial_rope(ag::Var(x), 2).value()), 0.0);
}

TEST(Rope, Gradient) {
  ag::Var x = param({1, 3, 4, 8}, 9);
  EXPECT_LT(grad_check([&] { return probe_loss(axial_rope(x, 2)); }, {x}).max_rel_error, 1e-6);
}

TEST(Attention, NeighborhoodMatchesBruteForce) {
  const AttentionParams p = make_params(8, 2, 3, false, 10);
  const ag::Var x = param({2, 5, 6, 8}, 12);
  EXPECT_LT(max_abs_diff(self_attention(x, p).value(), brute_force_attention(x.value(), p)), 1e-12);
}

TEST(Attention, GlobalMatchesBruteForce) {
  const AttentionParams p = make_params(8, 2, kGlobal, false, 13);
  const ag::Var x = param({1, 3, 4, 8}, 15);
  EXPECT_LT(max_abs_diff(self_attention(x, p).value(), brute_force_attention(x.value(), p)), 1e-12);
}

TEST(Attention, SingleTokenReturnsProjectedValue) {
  const AttentionParams p = make_params(4, 1, kGlobal, true, 16);
  const ag::Var x = param({1, 1, 1, 4}, 18);
  const Tensor& wqkv = p.qkv_weight.value();
  const Tensor& wo = p.out_weight.value();
  std::vector<double> v(4, 0.0);
  for (int64_t o = 0; o < 4; ++o)
    for (int64_t i = 0; i < 4; ++i) v[o] += x.value()[i] * wqkv[i * 12 + 8 + o];
  const Tensor y = self_attention(x, p).value();
  for (int64_t o = 0; o < 4; ++o) {
    double e = 0;
    for (int64_t i = 0; i < 4; ++i) e += v[i] * wo[i * 4 + o];
    EXPECT_NEAR(y[o], e, 1e-12);
  }
  AttentionParams pn = p;
  pn.kernel = 3;
  EXPECT_LT(max_abs_diff(self_attention(x, pn).value(), y), 1e-14);
}

TEST(Attention, FullKernelEqualsGlobal) {
  AttentionParams p = make_params(8, 2, 7, true, 19);
  const ag::Var x = param({2, 5, 7, 8}, 21);
  const Tensor na = neighborhood_attention(x, 7, p).value();
  EXPECT_LT(max_abs_diff(na, global_attention(x, p).value()), 1e-12);
  EXPECT_GT(max_abs_diff(neighborhood_attention(x, 3, p).value(), na), 1e-6);
}

TEST(Attention, GlobalWithoutRopeIsPermutationEquivariant) {
  const AttentionParams p = make_params(8, 2, kGlobal, false, 22);
  const Tensor x = Rng(24).normal_tensor({1, 3, 4, 8});
  std::vector<int64_t> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(25);
  for (int64_t i = 11; i > 0; --i) std::swap(perm[i], perm[rng.below(static_cast<uint64_t>(i + 1))]);
  Tensor xp(x.shape());
  for (int64_t t = 0; t < 12; ++t)
    for (int64_t c = 0; c < 8; ++c) xp[t * 8 + c] = x[perm[t] * 8 + c];
  const Tensor y = global_attention(ag::Var(x), p).value();
  const Tensor yp = global_attention(ag::Var(xp), p).value();
  for (int64_t t = 0; t < 12; ++t)
    for (int64_t c = 0; c < 8; ++c) EXPECT_NEAR(yp[t * 8 + c], y[perm[t] * 8 + c], 1e-12);
}

TEST(Attention, WeightsAreDistributions) {
  for (int64_t kernel : {int64_t{3}, int64_t{5}, kGlobal}) {
    const AttentionParams p = make_params(8, 2, kernel, true, 26);
    const Tensor w = attention_weights(Rng(28).normal_tensor({2, 6, 5, 8}), p);
    const int64_t keys = window_size(6, 5, kernel);
    ASSERT_EQ(w.shape(), (Shape{2, 2, 30, keys}));
    for (int64_t r = 0; r < 2 * 2 * 30; ++r) {
      double s = 0;
      for (int64_t j = 0; j < keys; ++j) {
        EXPECT_GE(w[r * keys + j], 0.0);
        s += w[r * keys + j];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Attention, CountsComparisonsAndCost) {
  const AttentionParams p = make_params(8, 2, 3, true, 29);
  CostCounter c;
  {
    ScopedCostCounter scope(c);
    ag::NoGradGuard ng;
    self_attention(ag::Var(Tensor({2, 6, 6, 8}, 0.5)), p);
  }
  const int64_t cmp = 2 * 2 * 36 * 9;
  EXPECT_EQ(c.key_comparisons, cmp);
  EXPECT_EQ(c.softmax_elements, cmp);
  EXPECT_EQ(c.macs, 2 * 36 * 8 * 24 + 2 * 36 * 8 * 8 + 2 * cmp * 4);
}

TEST(Attention, BorderQueriesSeeFullWindow) {
  const AttentionParams p = make_params(4, 1, 5, false, 30);
  CostCounter c;
  ScopedCostCounter scope(c);
  self_attention(ag::Var(Tensor({1, 5, 9, 4}, 0.1)), p);
  EXPECT_EQ(c.key_comparisons, 45 * 25);
}

TEST(Attention, NeighborhoodGradient) {
  AttentionParams p = make_params(8, 2, 3, true, 31);
  ag::Var x = param({1, 4, 5, 8}, 33);
  const auto r = grad_check([&] { return probe_loss(self_attention(x, p)); }, {x, p.qkv_weight, p.out_weight});
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Attention, GlobalGradient) {
  AttentionParams p = make_params(8, 2, kGlobal, true, 34);
  ag::Var x = param({2, 3, 3, 8}, 36);
  const auto r = grad_check([&] { return probe_loss(self_attention(x, p)); }, {x, p.qkv_weight, p.out_weight});
  EXPECT_LT(r.max_rel_error, 1e-5);
}

TEST(Attention, RejectsBadShapes) {
  AttentionParams p = make_params(8, 3, 3, false, 37);
  EXPECT_THROW(self_attention(ag::Var(Tensor({1, 3, 3, 8})), p), std::invalid_argument);
  p = make_params(8, 2, 3, false, 37);
  EXPECT_THROW(neighborhood_attention(ag::Var(Tensor({1, 3, 3, 8})), 4, p), std::invalid_argument);
}

TEST(Attention, FloatAndDoubleKernelsAgree) {
  const Geometry g{1, 2, 4, 4, 4, 3};
  const Tensor q = Rng(38).normal_tensor({2 * 16 * 4}), k = Rng(39).normal_tensor({2 * 16 * 4}),
               v = Rng(40).normal_tensor({2 * 16 * 4});
  std::vector<double> outd(128);
  attend<double>(g, q.values(), k.values(), v.values(), outd);
  std::vector<float> qf(q.values().begin(), q.values().end()), kf(k.values().begin(), k.values().end()),
      vf(v.values().begin(), v.values().end()), outf(128);
  attend<float>(g, qf, kf, vf, outf);
  for (size_t i = 0; i < 128; ++i) EXPECT_NEAR(outf[i], outd[i], 1e-5);
}

}  // namespace
}  // namespace rfhit::attention
