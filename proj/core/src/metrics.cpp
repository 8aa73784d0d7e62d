#include "rfhit/metrics.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>

#include <fmt/format.h>

namespace rfhit::metrics {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void require_same_extent(const BinaryVolume& a, const BinaryVolume& b, const char* what) {
  if (a.depth != b.depth || a.height != b.height || a.width != b.width) {
    throw std::invalid_argument(fmt::format("{}: shape {}x{}x{} vs {}x{}x{}", what, a.depth, a.height,
                                            a.width, b.depth, b.height, b.width));
  }
}

void require_binary(const BinaryVolume& v, const char* what) {
  for (uint8_t x : v.voxels) {
    if (x > 1) throw std::invalid_argument(std::string(what) + ": non-binary voxel value");
  }
}

// 1D squared distance transform with weight w between neighbours
// (Felzenszwalb & Huttenlocher lower envelope). Infinite entries are not
// sites.
void edt_1d(std::vector<double>& f, double w, std::vector<int64_t>& v, std::vector<double>& z,
            std::vector<double>& out) {
  const auto n = static_cast<int64_t>(f.size());
  int64_t k = -1;
  const double w2 = w * w;
  for (int64_t q = 0; q < n; ++q) {
    if (f[static_cast<size_t>(q)] == kInf) continue;
    const double fq = f[static_cast<size_t>(q)] + w2 * static_cast<double>(q * q);
    while (k >= 0) {
      const int64_t p = v[static_cast<size_t>(k)];
      const double fp = f[static_cast<size_t>(p)] + w2 * static_cast<double>(p * p);
      const double s = (fq - fp) / (2.0 * w2 * static_cast<double>(q - p));
      if (s <= z[static_cast<size_t>(k)]) {
        --k;
        continue;
      }
      ++k;
      v[static_cast<size_t>(k)] = q;
      z[static_cast<size_t>(k)] = s;
      break;
    }
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -kInf;
    }
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), kInf);
    return;
  }
  int64_t j = 0;
  for (int64_t q = 0; q < n; ++q) {
    while (j < k && z[static_cast<size_t>(j + 1)] < static_cast<double>(q)) ++j;
    const int64_t p = v[static_cast<size_t>(j)];
    const double d = w * static_cast<double>(q - p);
    out[static_cast<size_t>(q)] = d * d + f[static_cast<size_t>(p)];
  }
}

struct PooledVolume {
  const SegVolume* pred;
  const LabelVolume* truth;
};

std::vector<PooledVolume> paired(std::span<const SegVolume> predictions,
                                 std::span<const LabelVolume> truth) {
  if (predictions.size() != truth.size()) {
    throw std::invalid_argument("prediction and ground-truth volume counts differ");
  }
  std::vector<PooledVolume> out;
  for (size_t i = 0; i < predictions.size(); ++i) {
    const SegVolume& p = predictions[i];
    const LabelVolume& t = truth[i];
    if (p.id != t.id) throw std::invalid_argument("volume " + p.id + " paired with ground truth " + t.id);
    if (p.depth != t.depth || p.height != t.height || p.width != t.width) {
      throw std::invalid_argument("volume " + p.id + ": prediction and ground-truth shapes differ");
    }
    out.push_back({&p, &t});
  }
  // Fixed summation order regardless of input order.
  std::sort(out.begin(), out.end(),
            [](const PooledVolume& a, const PooledVolume& b) { return a.pred->id < b.pred->id; });
  return out;
}

}  // namespace

int64_t BinaryVolume::count() const {
  return std::count(voxels.begin(), voxels.end(), uint8_t{1});
}

BinaryVolume LabelVolume::class_mask(int32_t c) const {
  BinaryVolume m(depth, height, width);
  for (size_t i = 0; i < labels.size(); ++i) m.voxels[i] = labels[i] == c ? 1 : 0;
  return m;
}

std::span<const double> SegVolume::class_values(int64_t c) const {
  const auto n = static_cast<size_t>(depth * height * width);
  return std::span<const double>(values).subspan(static_cast<size_t>(c) * n, n);
}

double dice(const BinaryVolume& pred, const BinaryVolume& gt) {
  require_same_extent(pred, gt, "dice");
  require_binary(pred, "dice");
  require_binary(gt, "dice");
  int64_t a = 0, b = 0, both = 0;
  for (size_t i = 0; i < pred.voxels.size(); ++i) {
    a += pred.voxels[i];
    b += gt.voxels[i];
    both += pred.voxels[i] & gt.voxels[i];
  }
  if (a + b == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(a + b);
}

BinaryVolume surface(const BinaryVolume& m) {
  BinaryVolume s(m.depth, m.height, m.width);
  for (int64_t z = 0; z < m.depth; ++z) {
    for (int64_t y = 0; y < m.height; ++y) {
      for (int64_t x = 0; x < m.width; ++x) {
        if (!m.at(z, y, x)) continue;
        const bool border = z == 0 || y == 0 || x == 0 || z + 1 == m.depth || y + 1 == m.height ||
                            x + 1 == m.width;
        s.at(z, y, x) = border || !m.at(z - 1, y, x) || !m.at(z + 1, y, x) || !m.at(z, y - 1, x) ||
                        !m.at(z, y + 1, x) || !m.at(z, y, x - 1) || !m.at(z, y, x + 1);
      }
    }
  }
  return s;
}

std::vector<double> distance_transform(const BinaryVolume& sites, const Spacing& spacing) {
  const int64_t d = sites.depth, h = sites.height, w = sites.width;
  std::vector<double> g(sites.voxels.size());
  for (size_t i = 0; i < g.size(); ++i) g[i] = sites.voxels[i] ? 0.0 : kInf;
  const int64_t extent[3] = {d, h, w};
  const int64_t stride[3] = {h * w, w, 1};
  const int64_t longest = std::max({d, h, w});
  std::vector<double> f, out;
  std::vector<int64_t> v(static_cast<size_t>(longest));
  std::vector<double> z(static_cast<size_t>(longest));
  for (int axis = 0; axis < 3; ++axis) {
    const int64_t n = extent[axis];
    f.resize(static_cast<size_t>(n));
    out.resize(static_cast<size_t>(n));
    for (int64_t base = 0; base < d * h * w; ++base) {
      // Visit each line once, starting from its zero coordinate on `axis`.
      if ((base / stride[axis]) % n != 0) continue;
      for (int64_t i = 0; i < n; ++i) f[static_cast<size_t>(i)] = g[static_cast<size_t>(base + i * stride[axis])];
      edt_1d(f, spacing[static_cast<size_t>(axis)], v, z, out);
      for (int64_t i = 0; i < n; ++i) g[static_cast<size_t>(base + i * stride[axis])] = out[static_cast<size_t>(i)];
    }
  }
  for (double& x : g) x = std::sqrt(x);
  return g;
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double rank = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<size_t>(std::floor(rank));
  const size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = rank - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

std::optional<double> hd95(const BinaryVolume& pred, const BinaryVolume& gt, const Spacing& spacing) {
  require_same_extent(pred, gt, "hd95");
  const int64_t a = pred.count(), b = gt.count();
  if (a == 0 && b == 0) return 0.0;
  if (a == 0 || b == 0) return std::nullopt;
  const BinaryVolume sa = surface(pred), sb = surface(gt);
  const auto to_b = distance_transform(sb, spacing);
  const auto to_a = distance_transform(sa, spacing);
  std::vector<double> pooled;
  for (size_t i = 0; i < sa.voxels.size(); ++i) {
    if (sa.voxels[i]) pooled.push_back(to_b[i]);
    if (sb.voxels[i]) pooled.push_back(to_a[i]);
  }
  return percentile(std::move(pooled), 0.95);
}

SegVolume stack_slices(std::span<const SlicePrediction> slices, const data::VolumeInfo& expected,
                       const Spacing& spacing) {
  std::map<int64_t, const SlicePrediction*> by_index;
  for (const auto& s : slices) {
    if (s.volume_id != expected.id) continue;
    if (!by_index.emplace(s.slice_index, &s).second) {
      throw std::invalid_argument(fmt::format("volume {}: duplicate slice {}", expected.id, s.slice_index));
    }
  }
  std::vector<int64_t> order = expected.slices;
  std::sort(order.begin(), order.end());
  for (int64_t idx : order) {
    if (!by_index.count(idx)) throw std::invalid_argument(fmt::format("volume {}: missing slice {}", expected.id, idx));
  }
  if (by_index.size() != order.size()) {
    throw std::invalid_argument(fmt::format("volume {}: unexpected extra slices", expected.id));
  }
  if (order.empty()) throw std::invalid_argument("volume " + expected.id + ": no slices");
  const Tensor& first = by_index.at(order.front())->values;
  SegVolume vol;
  vol.id = expected.id;
  vol.classes = first.channels();
  vol.depth = static_cast<int64_t>(order.size());
  vol.height = first.height();
  vol.width = first.width();
  vol.spacing = spacing;
  vol.values.resize(static_cast<size_t>(vol.classes * vol.depth * vol.height * vol.width));
  for (int64_t z = 0; z < vol.depth; ++z) {
    const Tensor& t = by_index.at(order[static_cast<size_t>(z)])->values;
    if (!t.same_shape(first)) {
      throw std::invalid_argument(fmt::format("volume {}: slice {} has shape {}, expected {}", expected.id,
                                              order[static_cast<size_t>(z)], shape_string(t.shape()),
                                              shape_string(first.shape())));
    }
    for (int64_t c = 0; c < vol.classes; ++c) {
      for (int64_t y = 0; y < vol.height; ++y) {
        for (int64_t x = 0; x < vol.width; ++x) vol.at(c, z, y, x) = t.at(0, c, y, x);
      }
    }
  }
  return vol;
}

LabelVolume stack_labels(std::span<const data::SliceSample> samples, const data::VolumeInfo& expected,
                         const Spacing& spacing) {
  std::map<int64_t, const data::SliceSample*> by_index;
  for (const auto& s : samples) {
    if (s.volume_id != expected.id) continue;
    if (!by_index.emplace(s.slice_index, &s).second) {
      throw std::invalid_argument(fmt::format("volume {}: duplicate slice {}", expected.id, s.slice_index));
    }
  }
  std::vector<int64_t> order = expected.slices;
  std::sort(order.begin(), order.end());
  if (order.empty()) throw std::invalid_argument("volume " + expected.id + ": no slices");
  LabelVolume vol;
  vol.id = expected.id;
  vol.spacing = spacing;
  vol.depth = static_cast<int64_t>(order.size());
  for (int64_t idx : order) {
    auto it = by_index.find(idx);
    if (it == by_index.end()) throw std::invalid_argument(fmt::format("volume {}: missing slice {}", expected.id, idx));
    const data::LabelMap& l = it->second->label;
    if (vol.labels.empty()) {
      vol.height = l.height;
      vol.width = l.width;
    } else if (l.height != vol.height || l.width != vol.width) {
      throw std::invalid_argument(fmt::format("volume {}: slice {} size differs", expected.id, idx));
    }
    vol.labels.insert(vol.labels.end(), l.values.begin(), l.values.end());
  }
  return vol;
}

std::vector<double> ThresholdGrid::values() const {
  if (count < 2 || !(lo > 0.0 && lo < hi && hi < 1.0)) {
    throw std::invalid_argument("threshold grid needs count >= 2 and 0 < lo < hi < 1");
  }
  std::vector<double> v(static_cast<size_t>(count));
  for (int64_t i = 0; i < count; ++i) {
    v[static_cast<size_t>(i)] =
        i + 1 == count ? hi : lo + static_cast<double>(i) * (hi - lo) / static_cast<double>(count - 1);
  }
  return v;
}

std::vector<BinaryVolume> decode(const SegVolume& volume, std::span<const double> thresholds) {
  if (static_cast<int64_t>(thresholds.size()) != volume.classes) {
    throw std::invalid_argument(fmt::format("decode: {} thresholds for {} classes", thresholds.size(),
                                            volume.classes));
  }
  std::vector<BinaryVolume> out;
  for (int64_t c = 0; c < volume.classes; ++c) {
    BinaryVolume m(volume.depth, volume.height, volume.width);
    const auto vals = volume.class_values(c);
    for (size_t i = 0; i < vals.size(); ++i) m.voxels[i] = vals[i] >= thresholds[static_cast<size_t>(c)];
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<double> dice_curve(std::span<const SegVolume> predictions,
                               std::span<const LabelVolume> truth, int32_t c,
                               const ThresholdGrid& grid) {
  const auto pairs = paired(predictions, truth);
  if (pairs.empty()) throw std::invalid_argument("calibration needs at least one validation volume");
  const auto taus = grid.values();
  std::vector<double> total(taus.size(), 0.0);
  std::vector<double> all, pos;
  for (const auto& [pred, gt] : pairs) {
    if (c < 0 || c >= pred->classes) throw std::invalid_argument("dice_curve: class out of range");
    const auto vals = pred->class_values(c);
    all.assign(vals.begin(), vals.end());
    pos.clear();
    for (size_t i = 0; i < vals.size(); ++i) {
      if (gt->labels[i] == c) pos.push_back(vals[i]);
    }
    std::sort(all.begin(), all.end());
    std::sort(pos.begin(), pos.end());
    const auto n_gt = static_cast<int64_t>(pos.size());
    for (size_t k = 0; k < taus.size(); ++k) {
      const auto n_pred = static_cast<int64_t>(all.end() - std::lower_bound(all.begin(), all.end(), taus[k]));
      const auto tp = static_cast<int64_t>(pos.end() - std::lower_bound(pos.begin(), pos.end(), taus[k]));
      total[k] += n_pred + n_gt == 0 ? 1.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(n_pred + n_gt);
    }
  }
  for (double& t : total) t /= static_cast<double>(pairs.size());
  return total;
}

std::vector<double> calibrate_thresholds(std::span<const SegVolume> predictions,
                                         std::span<const LabelVolume> truth,
                                         const ThresholdGrid& grid) {
  if (predictions.empty()) throw std::invalid_argument("calibration needs at least one validation volume");
  const auto taus = grid.values();
  std::vector<double> out;
  for (int32_t c = 0; c < predictions.front().classes; ++c) {
    const auto curve = dice_curve(predictions, truth, c, grid);
    // max_element keeps the first (lowest) threshold among ties.
    out.push_back(taus[static_cast<size_t>(std::max_element(curve.begin(), curve.end()) - curve.begin())]);
  }
  return out;
}

std::vector<std::string> default_class_names(int64_t classes) {
  if (classes == 4) return {"RV", "Myo", "LV"};
  std::vector<std::string> names;
  for (int64_t c = 1; c < classes; ++c) names.push_back("class " + std::to_string(c));
  return names;
}

EvalSummary evaluate(std::span<const SegVolume> predictions, std::span<const LabelVolume> truth,
                     std::span<const double> thresholds, std::vector<std::string> class_names) {
  const auto pairs = paired(predictions, truth);
  if (pairs.empty()) throw std::invalid_argument("evaluate: no volumes");
  const int64_t classes = pairs.front().pred->classes;
  EvalSummary s;
  s.class_names = class_names.empty() ? default_class_names(classes) : std::move(class_names);
  if (static_cast<int64_t>(s.class_names.size()) != classes - 1) {
    throw std::invalid_argument("evaluate: class name count does not match foreground classes");
  }
  const auto fg = static_cast<size_t>(classes - 1);
  s.mean_dice.assign(fg, 0.0);
  std::vector<double> hd_sum(fg, 0.0);
  std::vector<int64_t> hd_n(fg, 0);
  s.undefined_hd95.assign(fg, 0);
  for (const auto& [pred, gt] : pairs) {
    if (pred->classes != classes) throw std::invalid_argument("volume " + pred->id + ": class count differs");
    const auto decoded = decode(*pred, thresholds);
    VolumeScores vs{pred->id, {}};
    for (int32_t c = 1; c < classes; ++c) {
      const BinaryVolume truth_mask = gt->class_mask(c);
      ClassScore cs{dice(decoded[static_cast<size_t>(c)], truth_mask),
                    hd95(decoded[static_cast<size_t>(c)], truth_mask, gt->spacing)};
      const auto i = static_cast<size_t>(c - 1);
      s.mean_dice[i] += cs.dice;
      if (cs.hd95) {
        hd_sum[i] += *cs.hd95;
        ++hd_n[i];
      } else {
        ++s.undefined_hd95[i];
      }
      vs.classes.push_back(cs);
    }
    s.volumes.push_back(std::move(vs));
  }
  double hd_avg = 0.0;
  int64_t hd_classes = 0;
  for (size_t i = 0; i < fg; ++i) {
    s.mean_dice[i] /= static_cast<double>(pairs.size());
    s.avg_dice += s.mean_dice[i];
    if (hd_n[i] > 0) {
      s.mean_hd95.push_back(hd_sum[i] / static_cast<double>(hd_n[i]));
      hd_avg += *s.mean_hd95.back();
      ++hd_classes;
    } else {
      s.mean_hd95.push_back(std::nullopt);
    }
  }
  s.avg_dice /= static_cast<double>(fg);
  if (hd_classes > 0) s.avg_hd95 = hd_avg / static_cast<double>(hd_classes);
  return s;
}

std::string format_table(const EvalSummary& s) {
  std::string out = fmt::format("{:<12}", "");
  for (const auto& n : s.class_names) out += fmt::format("{:>10}", n);
  out += fmt::format("{:>10}\n", "Avg.");
  out += fmt::format("{:<12}", "Dice (%)");
  for (double d : s.mean_dice) out += fmt::format("{:>10.2f}", 100.0 * d);
  out += fmt::format("{:>10.2f}\n", 100.0 * s.avg_dice);
  auto cell = [](const std::optional<double>& v) {
    return v ? fmt::format("{:>10.2f}", *v) : fmt::format("{:>10}", "n/a");
  };
  out += fmt::format("{:<12}", "HD95 (mm)");
  for (const auto& h : s.mean_hd95) out += cell(h);
  out += cell(s.avg_hd95) + "\n";
  for (size_t i = 0; i < s.undefined_hd95.size(); ++i) {
    if (s.undefined_hd95[i] > 0) {
      out += fmt::format("note: {} HD95 undefined in {} of {} volumes (one mask empty)\n", s.class_names[i],
                         s.undefined_hd95[i], s.volumes.size());
    }
  }
  return out;
}

}  // namespace rfhit::metrics
