#include "rfhit/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "metrics_oracle.h"
#include "rfhit/random.h"

namespace rfhit::metrics {
namespace {

using testing::oracle_dice;
using testing::oracle_hd95;
using testing::oracle_surface;
using testing::random_mask;

TEST(Dice, HandExamples) {
  BinaryVolume a(1, 2, 4), b(1, 2, 4);
  for (int i : {0, 1, 2, 3}) a.voxels[i] = 1;
  for (int i : {2, 3, 4, 5}) b.voxels[i] = 1;
  EXPECT_DOUBLE_EQ(dice(a, b), 0.5);
  EXPECT_DOUBLE_EQ(dice(a, a), 1.0);
  BinaryVolume c(1, 2, 4);
  for (int i : {4, 5, 6, 7}) c.voxels[i] = 1;
  EXPECT_DOUBLE_EQ(dice(a, c), 0.0);
  EXPECT_DOUBLE_EQ(dice(BinaryVolume(1, 2, 4), BinaryVolume(1, 2, 4)), 1.0);
  EXPECT_DOUBLE_EQ(dice(BinaryVolume(1, 2, 4), a), 0.0);
}

TEST(Dice, Errors) {
  BinaryVolume a(1, 2, 2), b(1, 2, 3);
  EXPECT_THROW(dice(a, b), std::invalid_argument);
  a.voxels[0] = 2;
  EXPECT_THROW(dice(a, a), std::invalid_argument);
}

TEST(Hd95, OffsetVoxelsGiveEuclideanDistance) {
  BinaryVolume a(8, 8, 8), b(8, 8, 8);
  a.at(1, 1, 2) = 1;
  b.at(4, 5, 2) = 1;
  EXPECT_EQ(hd95(a, b).value(), 5.0);
  EXPECT_EQ(hd95(a, a).value(), 0.0);
}

TEST(Hd95, SpacingScalesAxes) {
  BinaryVolume a(4, 4, 4), b(4, 4, 4);
  a.at(0, 0, 0) = 1;
  b.at(2, 0, 0) = 1;
  EXPECT_DOUBLE_EQ(hd95(a, b, {5.0, 1.0, 1.0}).value(), 10.0);
  EXPECT_DOUBLE_EQ(hd95(a, b, {1.0, 0.5, 0.5}).value(), 2.0);
}

TEST(Hd95, EmptyCases) {
  BinaryVolume a(3, 3, 3), e(3, 3, 3);
  a.at(1, 1, 1) = 1;
  EXPECT_EQ(hd95(e, e).value(), 0.0);
  EXPECT_FALSE(hd95(a, e).has_value());
  EXPECT_FALSE(hd95(e, a).has_value());
  EXPECT_THROW(hd95(a, BinaryVolume(3, 3, 2)), std::invalid_argument);
}

TEST(Hd95, PercentileInterpolates) {
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 0.95), 3.85);
  EXPECT_DOUBLE_EQ(percentile({7}, 0.95), 7.0);
  EXPECT_DOUBLE_EQ(percentile({1, 2}, 0.5), 1.5);
}

TEST(Surface, InteriorIsExcluded) {
  BinaryVolume cube(5, 5, 5);
  for (int64_t z = 1; z < 4; ++z)
    for (int64_t y = 1; y < 4; ++y)
      for (int64_t x = 1; x < 4; ++x) cube.at(z, y, x) = 1;
  const BinaryVolume s = surface(cube);
  EXPECT_EQ(s.count(), 26);
  EXPECT_EQ(s.at(2, 2, 2), 0);
  BinaryVolume full(3, 3, 3);
  std::fill(full.voxels.begin(), full.voxels.end(), 1);
  EXPECT_EQ(surface(full).count(), 26);
}

TEST(DistanceTransform, MatchesBruteForce) {
  Rng rng(3);
  const Spacing s{2.0, 1.0, 0.7};
  for (int trial = 0; trial < 10; ++trial) {
    const BinaryVolume sites = random_mask(6, 0.05, rng);
    if (sites.count() == 0) continue;
    const auto dt = distance_transform(sites, s);
    for (int64_t z = 0; z < 6; ++z)
      for (int64_t y = 0; y < 6; ++y)
        for (int64_t x = 0; x < 6; ++x) {
          double best = std::numeric_limits<double>::infinity();
          for (int64_t k = 0; k < 216; ++k) {
            if (!sites.voxels[k]) continue;
            const double dz = (z - k / 36) * s[0], dy = (y - k / 6 % 6) * s[1], dx = (x - k % 6) * s[2];
            best = std::min(best, std::sqrt(dz * dz + dy * dy + dx * dx));
          }
          EXPECT_NEAR(dt[(z * 6 + y) * 6 + x], best, 1e-9);
        }
  }
}

TEST(Metrics, MatchBruteForceOracles) {
  Rng rng(11);
  int defined = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const double p = 0.05 + 0.5 * rng.uniform();
    const BinaryVolume a = random_mask(8, p, rng), b = random_mask(8, p * rng.uniform(), rng);
    const Spacing s{1.0 + rng.uniform(), 1.0, 0.5 + rng.uniform()};
    EXPECT_NEAR(dice(a, b), oracle_dice(a, b), 1e-9);
    EXPECT_EQ(dice(a, b), dice(b, a));
    const auto got = hd95(a, b, s), want = oracle_hd95(a, b, s);
    ASSERT_EQ(got.has_value(), want.has_value());
    if (got) {
      ++defined;
      EXPECT_NEAR(*got, *want, 1e-9);
      EXPECT_NEAR(*got, *hd95(b, a, s), 1e-12);
    }
  }
  EXPECT_GT(defined, 150);
}

data::SliceSample label_slice(const std::string& vol, int64_t idx, std::vector<int32_t> values) {
  data::SliceSample s;
  s.volume_id = vol;
  s.slice_index = idx;
  s.label = data::LabelMap(2, 2);
  s.label.values = std::move(values);
  s.image = Tensor({1, 2, 2, 1});
  return s;
}

SlicePrediction pred_slice(const std::string& vol, int64_t idx, double fill, int64_t classes = 2) {
  return {vol, idx, Tensor({1, 4, 4, classes}, fill)};
}

TEST(Stack, OrdersBySliceIndex) {
  std::vector<SlicePrediction> s = {pred_slice("v", 2, 0.3), pred_slice("v", 0, 0.1), pred_slice("v", 1, 0.2),
                                    pred_slice("w", 0, 0.9)};
  s[1].values[1] = 0.7;
  const SegVolume vol = stack_slices(s, {"v", {0, 1, 2}}, {3.0, 1.0, 1.0});
  EXPECT_EQ(vol.classes, 2);
  EXPECT_EQ(vol.depth, 3);
  EXPECT_EQ(vol.height, 4);
  EXPECT_EQ(vol.values.size(), 2u * 3 * 4 * 4);
  EXPECT_EQ(vol.spacing[0], 3.0);
  EXPECT_EQ(vol.class_values(1)[0], 0.7);
  EXPECT_EQ(vol.class_values(0)[16], 0.2);
  EXPECT_EQ(vol.class_values(0)[32], 0.3);
  std::reverse(s.begin(), s.end());
  EXPECT_EQ(stack_slices(s, {"v", {0, 1, 2}}).values, vol.values);
}

TEST(Stack, MissingAndDuplicateSlicesAreNamed) {
  const std::vector<SlicePrediction> s = {pred_slice("v", 0, 0.1), pred_slice("v", 2, 0.3)};
  try {
    stack_slices(s, {"v", {0, 1, 2}});
    FAIL();
  } catch (const std::exception& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("v"), std::string::npos);
    EXPECT_NE(msg.find("1"), std::string::npos);
  }
  const std::vector<SlicePrediction> dup = {pred_slice("v", 0, 0.1), pred_slice("v", 0, 0.3)};
  EXPECT_THROW(stack_slices(dup, {"v", {0}}), std::exception);
  const std::vector<data::SliceSample> labels = {label_slice("v", 1, {0, 1, 1, 0})};
  EXPECT_THROW(stack_labels(labels, {"v", {0, 1}}), std::exception);
  EXPECT_EQ(stack_labels(labels, {"v", {1}}).labels, (std::vector<int32_t>{0, 1, 1, 0}));
}

TEST(Grid, ValuesAndEndpoints) {
  const auto v = ThresholdGrid{}.values();
  ASSERT_EQ(v.size(), 100u);
  EXPECT_EQ(v.front(), 0.2);
  EXPECT_EQ(v.back(), 0.8);
  for (size_t i = 1; i < v.size(); ++i) EXPECT_NEAR(v[i] - v[i - 1], 0.6 / 99, 1e-12);
}

TEST(Decode, ThresholdSemantics) {
  SegVolume v;
  v.classes = 2;
  v.depth = 1;
  v.height = 1;
  v.width = 3;
  v.values = {0.4, 0.6, 0.2, 0.2, 0.2, 0.2};
  const std::vector<double> th = {0.5, 0.2};
  const auto b = decode(v, th);
  EXPECT_EQ(b[0].voxels, (std::vector<uint8_t>{0, 1, 0}));
  EXPECT_EQ(b[1].voxels, (std::vector<uint8_t>{1, 1, 1}));
  const std::vector<double> higher = {0.65, 0.3};
  const auto c = decode(v, higher);
  for (int k = 0; k < 2; ++k)
    for (size_t i = 0; i < 3; ++i) EXPECT_LE(c[k].voxels[i], b[k].voxels[i]);
  EXPECT_THROW(decode(v, std::vector<double>{0.5}), std::invalid_argument);
}

struct UniformCase {
  std::vector<SegVolume> pred;
  std::vector<LabelVolume> truth;
};

// Class-1 values uniform on [0, 1]; ground truth is value > 0.55.
UniformCase uniform_case(uint64_t seed, int volumes = 2) {
  UniformCase u;
  Rng rng(seed);
  for (int n = 0; n < volumes; ++n) {
    SegVolume p;
    p.id = "v" + std::to_string(n);
    p.classes = 2;
    p.depth = 8;
    p.height = 16;
    p.width = 16;
    const int64_t vox = 8 * 16 * 16;
    p.values.resize(static_cast<size_t>(2 * vox));
    LabelVolume t;
    t.id = p.id;
    t.depth = 8;
    t.height = 16;
    t.width = 16;
    t.labels.resize(static_cast<size_t>(vox));
    for (int64_t i = 0; i < vox; ++i) {
      const double v = rng.uniform();
      p.values[static_cast<size_t>(vox + i)] = v;
      p.values[static_cast<size_t>(i)] = 1.0 - v;
      t.labels[static_cast<size_t>(i)] = v > 0.55 ? 1 : 0;
    }
    u.pred.push_back(p);
    u.truth.push_back(t);
  }
  return u;
}

TEST(Calibrate, RecoversKnownOptimum) {
  const UniformCase u = uniform_case(5);
  const auto th = calibrate_thresholds(u.pred, u.truth, ThresholdGrid{});
  ASSERT_EQ(th.size(), 2u);
  EXPECT_LE(std::abs(th[1] - 0.55), 0.6 / 99);
}

TEST(Calibrate, MatchesExhaustiveGridSearch) {
  const UniformCase u = uniform_case(6);
  const ThresholdGrid grid{20, 0.3, 0.7};
  double best = -1, arg = 0;
  for (double t : grid.values()) {
    double mean = 0;
    for (size_t n = 0; n < u.pred.size(); ++n) {
      BinaryVolume p(8, 16, 16), g = u.truth[n].class_mask(1);
      const auto vals = u.pred[n].class_values(1);
      for (size_t i = 0; i < p.voxels.size(); ++i) p.voxels[i] = vals[i] >= t;
      mean += oracle_dice(p, g) / static_cast<double>(u.pred.size());
    }
    if (mean > best) {
      best = mean;
      arg = t;
    }
  }
  const auto curve = dice_curve(u.pred, u.truth, 1, grid);
  EXPECT_NEAR(*std::max_element(curve.begin(), curve.end()), best, 1e-12);
  EXPECT_EQ(calibrate_thresholds(u.pred, u.truth, grid)[1], arg);
}

TEST(Calibrate, BinaryPredictionsTieToLowest) {
  UniformCase u = uniform_case(7, 1);
  for (size_t i = 0; i < u.truth[0].labels.size(); ++i) {
    const int32_t l = u.truth[0].labels[i];
    u.pred[0].values[i] = l == 0;
    u.pred[0].values[u.truth[0].labels.size() + i] = l == 1;
  }
  const auto th = calibrate_thresholds(u.pred, u.truth, ThresholdGrid{});
  EXPECT_EQ(th[1], 0.2);
  for (double t : {0.2, 0.5, 0.8}) {
    const auto s = evaluate(u.pred, u.truth, std::vector<double>{t, t});
    EXPECT_EQ(s.avg_dice, 1.0);
  }
}

TEST(Calibrate, OrderInvariantAndRejectsEmpty) {
  UniformCase u = uniform_case(8, 3);
  const auto a = calibrate_thresholds(u.pred, u.truth, ThresholdGrid{});
  std::reverse(u.pred.begin(), u.pred.end());
  std::reverse(u.truth.begin(), u.truth.end());
  EXPECT_EQ(calibrate_thresholds(u.pred, u.truth, ThresholdGrid{}), a);
  EXPECT_THROW(calibrate_thresholds({}, {}, ThresholdGrid{}), std::invalid_argument);
}

TEST(Evaluate, PerfectPredictionAndTable) {
  LabelVolume t;
  t.id = "p1";
  t.depth = 2;
  t.height = 3;
  t.width = 3;
  t.labels = {0, 1, 2, 3, 0, 0, 1, 1, 0, 0, 2, 2, 3, 3, 0, 0, 0, 1};
  SegVolume p;
  p.id = "p1";
  p.classes = 4;
  p.depth = 2;
  p.height = 3;
  p.width = 3;
  p.values.assign(4 * 18, 0.0);
  for (size_t i = 0; i < 18; ++i) p.values[static_cast<size_t>(t.labels[i]) * 18 + i] = 1.0;
  const std::vector<SegVolume> preds = {p};
  const std::vector<LabelVolume> truth = {t};
  const auto s = evaluate(preds, truth, std::vector<double>(4, 0.5));
  EXPECT_EQ(s.class_names, (std::vector<std::string>{"RV", "Myo", "LV"}));
  EXPECT_EQ(s.avg_dice, 1.0);
  EXPECT_EQ(s.avg_hd95.value(), 0.0);
  const std::string table = format_table(s);
  const auto rv = table.find("RV"), myo = table.find("Myo"), lv = table.find("LV"), avg = table.find("Avg.");
  EXPECT_LT(rv, myo);
  EXPECT_LT(myo, lv);
  EXPECT_LT(lv, avg);
  EXPECT_NE(table.find("100.00"), std::string::npos);
}

TEST(Evaluate, UndefinedHd95IsCountedNotAveraged) {
  LabelVolume t;
  t.id = "a";
  t.depth = 1;
  t.height = 2;
  t.width = 2;
  t.labels = {0, 1, 1, 0};
  SegVolume p;
  p.id = "a";
  p.classes = 2;
  p.depth = 1;
  p.height = 2;
  p.width = 2;
  p.values = {1, 1, 1, 1, 0, 0, 0, 0};
  const std::vector<SegVolume> preds = {p};
  const std::vector<LabelVolume> truth = {t};
  const auto s = evaluate(preds, truth, std::vector<double>{0.5, 0.5});
  EXPECT_EQ(s.mean_dice[0], 0.0);
  EXPECT_EQ(s.undefined_hd95[0], 1);
  EXPECT_FALSE(s.mean_hd95[0].has_value());
  EXPECT_NE(format_table(s).find("undefined"), std::string::npos);
}

}  // namespace
}  // namespace rfhit::metrics
