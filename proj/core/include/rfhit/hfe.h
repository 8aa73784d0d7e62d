#pragma once

#include <vector>

#include "rfhit/hourglass.h"

namespace rfhit::hfe {

/// (1 - a) * F + a * C with a = squash(raw).
ag::Var fuse(const ag::Var& main, const ag::Var& conditioning, const ag::Var& raw);
/// F + C; the additive ablation.
ag::Var fuse_add(const ag::Var& main, const ag::Var& conditioning);

/// Image-only encoder mirroring the flow model's encoder path. Emits one
/// feature map per fused level, shaped like the flow model's map there.
///
/// Blocks are unconditioned (learned-gain norms): the image does not change
/// along the flow trajectory, so features are computed once per sample.
class HierarchicalFeatureEncoder {
 public:
  HierarchicalFeatureEncoder() = default;
  HierarchicalFeatureEncoder(nn::ParameterStore& store, const ModelConfig& config, Rng& rng);

  hourglass::LevelFeatures operator()(const ag::Var& image) const;

  /// Fuses `features[level]` into the flow model map with this level's rule.
  ag::Var fuse_level(int64_t level, const ag::Var& main,
                     const hourglass::LevelFeatures& features) const;

  int64_t feature_levels() const { return static_cast<int64_t>(projections_.size()); }
  const std::vector<ag::Var>& alphas() const { return alphas_; }

  static constexpr const char* kPrefix = "hfe.";

 private:
  ModelConfig config_;
  nn::Linear patch_in_;
  std::vector<std::vector<hourglass::TransformerBlock>> levels_;
  std::vector<nn::Linear> merges_;
  std::vector<nn::Linear> projections_;
  std::vector<ag::Var> alphas_;
};

}  // namespace rfhit::hfe
