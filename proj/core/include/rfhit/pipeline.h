#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "rfhit/data.h"
#include "rfhit/metrics.h"
#include "rfhit/model.h"

namespace rfhit::pipeline {

struct SampleOptions {
  int64_t euler_steps = 3;
  uint64_t seed = 0;
  /// Slices per forward pass; does not affect results.
  int64_t batch = 8;
};

/// Starting noise for one slice, keyed by (seed, volume id, slice index) so
/// it does not depend on batching or order.
Tensor initial_noise(uint64_t seed, const std::string& volume_id, int64_t slice_index, int64_t classes,
                     Extent2 size);

/// Euler-samples every slice; encoder features are computed once per slice
/// and reused across the steps.
std::vector<metrics::SlicePrediction> predict(const RfHitModel& model,
                                              std::span<const data::SliceSample> samples,
                                              const SampleOptions& options);

std::vector<metrics::SegVolume> assemble(std::span<const metrics::SlicePrediction> slices,
                                         std::span<const data::VolumeInfo> volumes,
                                         const metrics::Spacing& spacing = {1.0, 1.0, 1.0});
std::vector<metrics::LabelVolume> ground_truth(std::span<const data::SliceSample> samples,
                                               const metrics::Spacing& spacing = {1.0, 1.0, 1.0});

metrics::Spacing spacing_of(std::span<const double> values);

/// Prediction folder: values/<volume>_<slice>_c<k>.pfm plus manifest.json
/// ({"classes": C, "volumes": [...], "spacing": [...]}).
void write_predictions(const std::filesystem::path& root, std::span<const metrics::SlicePrediction> slices,
                       const metrics::Spacing& spacing = {1.0, 1.0, 1.0});

struct PredictionFolder {
  std::vector<metrics::SlicePrediction> slices;
  std::vector<data::VolumeInfo> volumes;
  metrics::Spacing spacing{1.0, 1.0, 1.0};
  int64_t classes = 0;
};
PredictionFolder read_predictions(const std::filesystem::path& root);

/// {"thresholds": [...], "grid": {"count", "lo", "hi"}}
void write_thresholds(const std::filesystem::path& path, std::span<const double> thresholds,
                      const metrics::ThresholdGrid& grid);
std::vector<double> read_thresholds(const std::filesystem::path& path);

}  // namespace rfhit::pipeline
