#include "rfhit/hfe.h"

#include <stdexcept>
#include <string>

namespace rfhit::hfe {

ag::Var fuse(const ag::Var& main, const ag::Var& conditioning, const ag::Var& raw) {
  return ag::lerp(main, conditioning, raw);
}

ag::Var fuse_add(const ag::Var& main, const ag::Var& conditioning) {
  return ag::add(main, conditioning);
}

HierarchicalFeatureEncoder::HierarchicalFeatureEncoder(nn::ParameterStore& store,
                                                       const ModelConfig& config, Rng& rng)
    : config_(config) {
  const int64_t levels = config.levels();
  const int64_t fused = config.fuse_bottleneck ? levels : levels - 1;
  auto width = [&](int64_t l) { return config.widths[static_cast<size_t>(l)]; };
  auto name = [](const char* stem, int64_t l) { return stem + std::to_string(l); };

  patch_in_ = nn::Linear::create(store, "hfe.patch_in",
                                 config.patch_size.area() * config.image_channels, width(0), rng);
  for (int64_t l = 0; l + 1 < levels; ++l) {
    std::vector<hourglass::TransformerBlock> blocks;
    for (int64_t i = 0; i < config.depths[static_cast<size_t>(l)]; ++i) {
      blocks.emplace_back(store, name("hfe.enc", l) + name(".block", i), width(l),
                          config.num_heads_per_level[static_cast<size_t>(l)],
                          config.neighborhood_kernels[static_cast<size_t>(l)],
                          config.ffn_expansion, /*cond_width=*/0, config.use_rope, rng);
    }
    levels_.push_back(std::move(blocks));
  }
  for (int64_t l = 0; l < fused; ++l) {
    if (l > 0) {
      merges_.push_back(
          nn::Linear::create(store, name("hfe.merge", l - 1), 4 * width(l - 1), width(l), rng));
    }
    projections_.push_back(nn::Linear::create(store, name("hfe.proj", l), width(l), width(l), rng));
    if (config.fusion == FusionMode::kLerp) {
      alphas_.push_back(store.add(name("hfe.fuse", l) + ".alpha", Tensor({1}), nn::ParamRole::kLerp));
    }
  }
}

hourglass::LevelFeatures HierarchicalFeatureEncoder::operator()(const ag::Var& image) const {
  const Tensor& iv = image.value();
  if (iv.rank() != 4 || iv.channels() != config_.image_channels ||
      iv.height() != config_.input_size.height || iv.width() != config_.input_size.width) {
    throw std::invalid_argument("hfe: image shape " + shape_string(iv.shape()) +
                                " does not match the configured input");
  }
  hourglass::LevelFeatures out;
  ag::Var h = hourglass::patchify(image, config_.patch_size, patch_in_);
  for (int64_t l = 0; l < feature_levels(); ++l) {
    const auto i = static_cast<size_t>(l);
    if (l > 0) h = hourglass::token_merge(h, merges_[i - 1]);
    if (i < levels_.size()) {
      for (const auto& block : levels_[i]) h = block(h, ag::Var());
    }
    out.push_back(projections_[i](h));
  }
  return out;
}

ag::Var HierarchicalFeatureEncoder::fuse_level(int64_t level, const ag::Var& main,
                                               const hourglass::LevelFeatures& features) const {
  if (level < 0 || level >= static_cast<int64_t>(features.size())) {
    throw std::invalid_argument("hfe: no features for level " + std::to_string(level));
  }
  const ag::Var& c = features[static_cast<size_t>(level)];
  if (config_.fusion == FusionMode::kLerp) return fuse(main, c, alphas_[static_cast<size_t>(level)]);
  return fuse_add(main, c);
}

}  // namespace rfhit::hfe
