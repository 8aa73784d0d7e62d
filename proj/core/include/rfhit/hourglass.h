#pragma once

#include <functional>
#include <span>
#include <vector>

#include "rfhit/attention.h"
#include "rfhit/config.h"
#include "rfhit/nn.h"

namespace rfhit::hourglass {

/// Per-level feature maps; level l is (B, H/(p*2^l), W/(p*2^l), widths[l]).
using LevelFeatures = std::vector<ag::Var>;

/// Non-overlapping patches flattened (dy, dx, c) and projected by `proj`.
ag::Var patchify(const ag::Var& x, Extent2 patch, const nn::Linear& proj);
/// Projects tokens by `proj` to patch*patch*C channels and unfolds them.
ag::Var unpatchify(const ag::Var& tokens, Extent2 patch, const nn::Linear& proj);

/// 2x2 neighbourhoods concatenated channelwise then projected by `proj`.
ag::Var token_merge(const ag::Var& x, const nn::Linear& proj);
/// Projection to 4*width_prev channels rearranged into a 2x larger map.
ag::Var token_split(const ag::Var& x, const nn::Linear& proj);

/// (1 - a) * decoder_x + a * encoder_skip, a = squash(raw).
ag::Var skip_lerp(const ag::Var& decoder_x, const ag::Var& encoder_skip, const ag::Var& raw);

/// Sinusoidal features of t (scaled by 1000), (batch, width): first half
/// sines, second half cosines.
Tensor timestep_features(std::span<const double> t, int64_t width);

/// Fourier timestep features -> input projection -> `depth` residual
/// gated-MLP layers -> RMS norm.
class MappingNetwork {
 public:
  MappingNetwork() = default;
  MappingNetwork(nn::ParameterStore& store, const std::string& name, const ModelConfig& config,
                 Rng& rng);

  ag::Var operator()(std::span<const double> t) const;
  int64_t width() const { return width_; }

 private:
  struct Layer {
    nn::AdaRmsNorm norm;
    nn::FeedForward ff;
  };
  int64_t width_ = 0;
  nn::Linear in_proj_;
  std::vector<Layer> layers_;
  nn::AdaRmsNorm out_norm_;
};

/// Pre-norm transformer block: x + attn(norm(x)), then x + ffn(norm(x)).
class TransformerBlock {
 public:
  TransformerBlock() = default;
  /// cond_width == 0 builds unconditioned (learned-gain) norms.
  TransformerBlock(nn::ParameterStore& store, const std::string& name, int64_t width,
                   int64_t heads, int64_t kernel, int64_t ffn_expansion, int64_t cond_width,
                   bool rope, Rng& rng);

  ag::Var operator()(const ag::Var& x, const ag::Var& cond) const;
  const attention::AttentionParams& attention() const { return attn_; }

 private:
  nn::AdaRmsNorm norm_attn_;
  attention::AttentionParams attn_;
  nn::AdaRmsNorm norm_ffn_;
  nn::FeedForward ffn_;
};

/// Called at encoder level l with the features about to be merged (and, if
/// enabled, at the bottleneck before its blocks); returns the fused map.
using FuseHook = std::function<ag::Var(int64_t level, const ag::Var& features)>;

/// The hourglass velocity network.
class HourglassFlowModel {
 public:
  HourglassFlowModel() = default;
  HourglassFlowModel(nn::ParameterStore& store, const ModelConfig& config, Rng& rng);

  /// xt (B, H, W, C_seg), image (B, H, W, C_I) -> velocity (B, H, W, C_seg).
  ag::Var operator()(const ag::Var& xt, std::span<const double> t, const ag::Var& image,
                     const FuseHook& fuse = {}) const;

  static constexpr const char* kPrefix = "hfm.";

 private:
  ModelConfig config_;
  nn::Linear patch_in_;
  MappingNetwork mapping_;
  std::vector<std::vector<TransformerBlock>> encoder_;
  std::vector<nn::Linear> merges_;
  std::vector<TransformerBlock> bottleneck_;
  std::vector<nn::Linear> splits_;
  std::vector<ag::Var> skip_alphas_;
  std::vector<std::vector<TransformerBlock>> decoder_;
  nn::AdaRmsNorm out_norm_;
  nn::Linear head_;
};

}  // namespace rfhit::hourglass
