#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rfhit {

struct Extent2 {
  int64_t height = 0;
  int64_t width = 0;

  int64_t area() const { return height * width; }
  auto operator<=>(const Extent2&) const = default;
};

enum class FusionMode { kLerp, kAdd };

std::string_view to_string(FusionMode mode);

/// Architecture hyperparameters for the flow model and its image encoder.
struct ModelConfig {
  Extent2 patch_size{4, 4};
  std::vector<int64_t> depths;
  std::vector<int64_t> widths;
  /// One per non-bottleneck level.
  std::vector<int64_t> neighborhood_kernels;
  int64_t mapping_depth = 1;
  int64_t mapping_width = 256;
  int64_t mapping_hidden = 784;
  std::vector<int64_t> num_heads_per_level;
  int64_t seg_channels = 4;
  int64_t image_channels = 1;
  Extent2 input_size{224, 224};

  int64_t ffn_expansion = 3;
  bool hfe_enabled = true;
  FusionMode fusion = FusionMode::kLerp;
  /// Fuse encoder features into the bottleneck before its blocks.
  bool fuse_bottleneck = true;
  bool use_rope = true;

  int64_t levels() const { return static_cast<int64_t>(depths.size()); }
  /// Token grid of hierarchy level `level`.
  Extent2 level_grid(int64_t level) const;
  int64_t head_dim(int64_t level) const;

  bool operator==(const ModelConfig&) const = default;
};

struct AugmentToggles {
  bool flips = true;
  bool rotate_scale = true;
  bool intensity = true;
  bool gamma = true;
  bool noise = true;

  static AugmentToggles none() { return {false, false, false, false, false}; }
  bool any() const { return flips || rotate_scale || intensity || gamma || noise; }
  bool operator==(const AugmentToggles&) const = default;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  int64_t batch_size = 32;
  int64_t epochs = 1000;
  /// Explicit optimizer step budget; 0 derives it from epochs and data size.
  int64_t steps = 0;
  double warmup_fraction = 0.01;
  uint64_t seed = 0;
  /// Global gradient-norm clip; non-positive disables clipping.
  double grad_clip = 1.0;
  AugmentToggles augment;

  bool operator==(const TrainConfig&) const = default;
};

struct ThresholdGridSpec {
  int64_t count = 100;
  double lo = 0.2;
  double hi = 0.8;

  bool operator==(const ThresholdGridSpec&) const = default;
};

struct InferConfig {
  int64_t euler_steps = 3;
  /// Per-class decode thresholds; empty until calibrated.
  std::vector<double> thresholds;
  ThresholdGridSpec grid;

  bool operator==(const InferConfig&) const = default;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  InferConfig infer;

  bool operator==(const RunConfig&) const = default;
};

/// All invariant violations; empty when valid.
std::vector<std::string> validate(const ModelConfig& config);
std::vector<std::string> validate(const TrainConfig& config);
std::vector<std::string> validate(const InferConfig& config);

/// Named architecture presets: "paper", "tiny", "unit".
ModelConfig preset(std::string_view name);
/// Model preset plus the matching training/inference recipe.
RunConfig run_preset(std::string_view name);
std::vector<std::string> preset_names();

/// Raised for unreadable or malformed configuration text.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& message, std::string field = {}, int64_t line = 0);
  const std::string& field() const { return field_; }
  int64_t line() const { return line_; }

 private:
  std::string field_;
  int64_t line_;
};

struct LoadedConfig {
  RunConfig config;
  /// Unknown keys and similar non-fatal findings.
  std::vector<std::string> warnings;
};

/// JSON text with "model", "train" and "infer" sections. The model section
/// is required; the others fall back to defaults.
LoadedConfig parse_config(std::string_view text);
LoadedConfig load_config(const std::filesystem::path& path);
std::string config_to_text(const RunConfig& config);
void save_config(const RunConfig& config, const std::filesystem::path& path);

}  // namespace rfhit
