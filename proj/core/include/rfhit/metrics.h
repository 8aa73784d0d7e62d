#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rfhit/config.h"
#include "rfhit/data.h"
#include "rfhit/tensor.h"

namespace rfhit::metrics {

/// Spacing in millimetres along (depth, height, width).
using Spacing = std::array<double, 3>;

/// D x H x W mask with values in {0, 1}.
struct BinaryVolume {
  int64_t depth = 0, height = 0, width = 0;
  std::vector<uint8_t> voxels;

  BinaryVolume() = default;
  BinaryVolume(int64_t d, int64_t h, int64_t w)
      : depth(d), height(h), width(w), voxels(static_cast<size_t>(d * h * w), 0) {}
  uint8_t& at(int64_t z, int64_t y, int64_t x) {
    return voxels[static_cast<size_t>((z * height + y) * width + x)];
  }
  uint8_t at(int64_t z, int64_t y, int64_t x) const {
    return voxels[static_cast<size_t>((z * height + y) * width + x)];
  }
  int64_t count() const;
  bool operator==(const BinaryVolume&) const = default;
};

/// Integer class volume D x H x W.
struct LabelVolume {
  std::string id;
  int64_t depth = 0, height = 0, width = 0;
  std::vector<int32_t> labels;
  Spacing spacing{1.0, 1.0, 1.0};

  BinaryVolume class_mask(int32_t c) const;
};

/// Per-class values C x D x H x W assembled from slices.
struct SegVolume {
  std::string id;
  int64_t classes = 0, depth = 0, height = 0, width = 0;
  std::vector<double> values;
  Spacing spacing{1.0, 1.0, 1.0};

  std::span<const double> class_values(int64_t c) const;
  double& at(int64_t c, int64_t z, int64_t y, int64_t x) {
    return values[static_cast<size_t>(((c * depth + z) * height + y) * width + x)];
  }
};

/// 2|A n B| / (|A| + |B|); 1 when both are empty.
double dice(const BinaryVolume& pred, const BinaryVolume& gt);

/// Foreground voxels with a background 6-neighbour or on the volume border.
BinaryVolume surface(const BinaryVolume& mask);

/// Exact Euclidean distance (mm) from every voxel to the nearest set voxel
/// of `sites`; +inf everywhere when `sites` is empty.
std::vector<double> distance_transform(const BinaryVolume& sites, const Spacing& spacing);

/// Linear interpolation between order statistics at rank q*(n-1).
double percentile(std::vector<double> values, double q);

/// 95th percentile of the pooled surface-to-surface distances in both
/// directions. 0 when both masks are empty; nullopt when exactly one is.
std::optional<double> hd95(const BinaryVolume& pred, const BinaryVolume& gt,
                           const Spacing& spacing = {1.0, 1.0, 1.0});

/// One slice of per-class values (1, H, W, C).
struct SlicePrediction {
  std::string volume_id;
  int64_t slice_index = 0;
  Tensor values;
};

/// Orders slices by slice_index and checks that exactly `expected` slices
/// are present.
SegVolume stack_slices(std::span<const SlicePrediction> slices, const data::VolumeInfo& expected,
                       const Spacing& spacing = {1.0, 1.0, 1.0});
LabelVolume stack_labels(std::span<const data::SliceSample> samples, const data::VolumeInfo& expected,
                         const Spacing& spacing = {1.0, 1.0, 1.0});

struct ThresholdGrid {
  int64_t count = 100;
  double lo = 0.2;
  double hi = 0.8;

  static ThresholdGrid from(const ThresholdGridSpec& spec) { return {spec.count, spec.lo, spec.hi}; }
  std::vector<double> values() const;
};

/// class c -> (value_c >= threshold_c).
std::vector<BinaryVolume> decode(const SegVolume& volume, std::span<const double> thresholds);

/// Per class, the grid value maximising mean Dice over the volumes; ties
/// take the lowest value. `predictions[i]` pairs with `truth[i]`.
std::vector<double> calibrate_thresholds(std::span<const SegVolume> predictions,
                                         std::span<const LabelVolume> truth,
                                         const ThresholdGrid& grid);

/// Mean Dice of class `c` at every grid value (the calibration objective).
std::vector<double> dice_curve(std::span<const SegVolume> predictions,
                               std::span<const LabelVolume> truth, int32_t c,
                               const ThresholdGrid& grid);

struct ClassScore {
  double dice = 0.0;
  std::optional<double> hd95;
};

struct VolumeScores {
  std::string id;
  std::vector<ClassScore> classes;  // foreground classes 1..C-1
};

struct EvalSummary {
  std::vector<std::string> class_names;  // foreground classes
  std::vector<VolumeScores> volumes;
  std::vector<double> mean_dice;                // per class
  std::vector<std::optional<double>> mean_hd95;  // per class, over defined volumes
  std::vector<int64_t> undefined_hd95;           // per class
  double avg_dice = 0.0;
  std::optional<double> avg_hd95;
};

/// Scores foreground classes of decoded predictions against ground truth.
EvalSummary evaluate(std::span<const SegVolume> predictions, std::span<const LabelVolume> truth,
                     std::span<const double> thresholds, std::vector<std::string> class_names = {});

/// Default names: RV, Myo, LV for four classes, else "class <c>".
std::vector<std::string> default_class_names(int64_t classes);

/// Text table: one row per foreground class plus Avg.
std::string format_table(const EvalSummary& summary);

}  // namespace rfhit::metrics
