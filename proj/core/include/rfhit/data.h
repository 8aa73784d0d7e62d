#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfhit/config.h"
#include "rfhit/random.h"
#include "rfhit/tensor.h"

namespace rfhit::data {

/// Integer class map, row-major.
struct LabelMap {
  int64_t height = 0;
  int64_t width = 0;
  std::vector<int32_t> values;

  LabelMap() = default;
  LabelMap(int64_t h, int64_t w, int32_t fill = 0)
      : height(h), width(w), values(static_cast<size_t>(h * w), fill) {}
  int32_t& at(int64_t y, int64_t x) { return values[static_cast<size_t>(y * width + x)]; }
  int32_t at(int64_t y, int64_t x) const { return values[static_cast<size_t>(y * width + x)]; }
  bool operator==(const LabelMap&) const = default;
};

/// One 2D slice: image (1, H, W, C_I) normalised to [-1, 1] and its labels.
struct SliceSample {
  Tensor image;
  LabelMap label;
  std::string volume_id;
  int64_t slice_index = 0;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// (1, H, W, classes) indicator mask. Throws DataError on out-of-range values.
Tensor one_hot(const LabelMap& label, int64_t classes);
/// Per-pixel argmax over channels of a (1, H, W, C) map; ties pick the lower class.
LabelMap argmax(const Tensor& mask);

/// Concatenates samples along the batch dim.
Tensor stack_images(std::span<const SliceSample* const> samples);
Tensor stack_one_hot(std::span<const SliceSample* const> samples, int64_t classes);

/// Cardiac-like phantoms: an LV blood pool, a myocardial ring around it and
/// an RV crescent beside it, inside a body ellipse. Classes are assigned in
/// the order 0 background, 1 RV, 2 Myo, 3 LV; fewer classes drop RV, then
/// Myo.
struct SyntheticSpec {
  Extent2 canvas{64, 64};
  int64_t classes = 4;
  int64_t volumes = 10;
  int64_t slices_per_volume = 10;
  /// Standard deviation of additive noise in raw intensity units (bands lie
  /// in [0, 1]).
  double noise = 0.08;
  uint64_t seed = 0;
  std::string volume_prefix = "vol";
};

std::vector<std::string> validate(const SyntheticSpec& spec);

/// Deterministic in spec; sample order is (volume, slice).
std::vector<SliceSample> generate_synthetic(const SyntheticSpec& spec);
SliceSample generate_synthetic_slice(const SyntheticSpec& spec, int64_t volume, int64_t slice);

/// Inverse-mapped geometric warp about the map centre.
struct GeoTransform {
  bool flip_horizontal = false;
  bool flip_vertical = false;
  double degrees = 0.0;
  double scale = 1.0;

  bool is_identity() const {
    return !flip_horizontal && !flip_vertical && degrees == 0.0 && scale == 1.0;
  }
};

/// Row-major source index of each output pixel under nearest-neighbour
/// sampling, or -1 outside the input. Multiples of 90 degrees at unit scale
/// on square maps are exact permutations.
std::vector<int64_t> nearest_source(int64_t height, int64_t width, const GeoTransform& tf);

LabelMap warp_label(const LabelMap& label, const GeoTransform& tf);
/// Bilinear warp of a (1, H, W, C) image; outside pixels take `fill`.
Tensor warp_image(const Tensor& image, const GeoTransform& tf, double fill);

struct AugmentRanges {
  double max_degrees = 15.0;
  double scale_lo = 0.9, scale_hi = 1.1;
  double intensity_scale_lo = 0.9, intensity_scale_hi = 1.1;
  double intensity_shift = 0.1;
  double gamma_lo = 0.8, gamma_hi = 1.2;
  double max_noise = 0.05;
};

/// Random flips, rotation and scaling (image and labels alike), then gamma,
/// intensity scale/shift and additive noise on the image.
SliceSample augment(const SliceSample& sample, const AugmentToggles& toggles, Rng& rng,
                    const AugmentRanges& ranges = {});

/// Slice-folder layout:
///   images/<volume>_<slice>.pgm            (C_I = 1)
///   images/<volume>_<slice>_ch<k>.pgm      (C_I > 1)
///   labels/<volume>_<slice>.pgm            (8-bit class ids)
///   manifest.json                          (optional)
/// The manifest is {"volumes": [{"id": ..., "slices": [...]}], "spacing": [z, y, x]}.
struct IngestOptions {
  int64_t image_channels = 1;
  int64_t classes = 4;
  Extent2 size{224, 224};
  /// When false, missing label files yield all-background labels.
  bool require_labels = true;
};

struct VolumeInfo {
  std::string id;
  std::vector<int64_t> slices;
};

struct SliceFolder {
  std::vector<SliceSample> samples;  // sorted by (volume_id, slice_index)
  std::vector<VolumeInfo> volumes;
  std::vector<double> spacing{1.0, 1.0, 1.0};
};

SliceFolder ingest_slice_folder(const std::filesystem::path& root, const IngestOptions& options);

/// Writes samples in slice-folder layout with 16-bit images.
void write_slice_folder(const std::filesystem::path& root, std::span<const SliceSample> samples,
                        std::span<const double> spacing = {});

/// Per-slice min-max to [-1, 1]; constant slices map to 0.
void normalize_min_max(Tensor& image);
/// Bilinear (align-corners off) resize of a (1, H, W, C) map.
Tensor resize_bilinear(const Tensor& image, Extent2 size);
LabelMap resize_nearest(const LabelMap& label, Extent2 size);

/// Volume ids and slice lists in sample order.
std::vector<VolumeInfo> volumes_of(std::span<const SliceSample> samples);

/// Splits "<volume>_<slice>" at the last underscore.
bool parse_stem(const std::string& stem, std::string& volume, int64_t& slice);
std::string slice_stem(const std::string& volume, int64_t slice);

}  // namespace rfhit::data
