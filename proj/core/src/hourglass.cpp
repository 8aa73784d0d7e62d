#include "rfhit/hourglass.h"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rfhit::hourglass {
namespace {

std::string level_name(const char* stem, int64_t level) { return stem + std::to_string(level); }

void require_feature_map(const ag::Var& x, const char* what) {
  if (x.value().rank() != 4) {
    throw std::invalid_argument(std::string(what) + ": expected a (B, H, W, C) map, got " +
                                shape_string(x.shape()));
  }
}

}  // namespace

ag::Var patchify(const ag::Var& x, Extent2 patch, const nn::Linear& proj) {
  require_feature_map(x, "patchify");
  return proj(ag::space_to_depth(x, patch.height, patch.width));
}

ag::Var unpatchify(const ag::Var& tokens, Extent2 patch, const nn::Linear& proj) {
  require_feature_map(tokens, "unpatchify");
  return ag::depth_to_space(proj(tokens), patch.height, patch.width);
}

ag::Var token_merge(const ag::Var& x, const nn::Linear& proj) {
  require_feature_map(x, "token_merge");
  if (x.value().height() % 2 != 0 || x.value().width() % 2 != 0) {
    throw std::invalid_argument("token_merge: odd map " + shape_string(x.shape()));
  }
  return proj(ag::space_to_depth(x, 2, 2));
}

ag::Var token_split(const ag::Var& x, const nn::Linear& proj) {
  require_feature_map(x, "token_split");
  return ag::depth_to_space(proj(x), 2, 2);
}

ag::Var skip_lerp(const ag::Var& decoder_x, const ag::Var& encoder_skip, const ag::Var& raw) {
  return ag::lerp(decoder_x, encoder_skip, raw);
}

Tensor timestep_features(std::span<const double> t, int64_t width) {
  if (width < 2 || width % 2 != 0) throw std::invalid_argument("timestep_features: odd width");
  const int64_t half = width / 2;
  Tensor f({static_cast<int64_t>(t.size()), width});
  for (size_t b = 0; b < t.size(); ++b) {
    for (int64_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
      const double angle = 1000.0 * t[b] * freq;
      f[static_cast<int64_t>(b) * width + i] = std::sin(angle);
      f[static_cast<int64_t>(b) * width + half + i] = std::cos(angle);
    }
  }
  return f;
}

MappingNetwork::MappingNetwork(nn::ParameterStore& store, const std::string& name,
                               const ModelConfig& config, Rng& rng)
    : width_(config.mapping_width) {
  in_proj_ = nn::Linear::create(store, name + ".in_proj", width_, width_, rng);
  for (int64_t d = 0; d < config.mapping_depth; ++d) {
    const std::string layer = name + level_name(".layer", d);
    Layer l;
    l.norm = nn::AdaRmsNorm::plain(store, layer + ".norm", width_);
    l.ff = nn::FeedForward::create(store, layer + ".ff", width_, config.mapping_hidden, rng);
    layers_.push_back(std::move(l));
  }
  out_norm_ = nn::AdaRmsNorm::plain(store, name + ".out_norm", width_);
}

ag::Var MappingNetwork::operator()(std::span<const double> t) const {
  ag::Var h = in_proj_(ag::Var(timestep_features(t, width_)));
  for (const Layer& l : layers_) h = ag::add(h, l.ff(l.norm(h, ag::Var())));
  return out_norm_(h, ag::Var());
}

TransformerBlock::TransformerBlock(nn::ParameterStore& store, const std::string& name,
                                   int64_t width, int64_t heads, int64_t kernel,
                                   int64_t ffn_expansion, int64_t cond_width, bool rope,
                                   Rng& rng) {
  auto make_norm = [&](const std::string& n) {
    return cond_width > 0 ? nn::AdaRmsNorm::conditioned(store, n, width, cond_width, rng)
                          : nn::AdaRmsNorm::plain(store, n, width);
  };
  norm_attn_ = make_norm(name + ".norm_attn");
  attn_.width = width;
  attn_.heads = heads;
  attn_.kernel = kernel;
  attn_.rope = rope;
  attn_.qkv_weight = nn::Linear::create(store, name + ".attn.qkv", width, 3 * width, rng).weight;
  attn_.out_weight = nn::Linear::create(store, name + ".attn.out", width, width, rng).weight;
  norm_ffn_ = make_norm(name + ".norm_ffn");
  ffn_ = nn::FeedForward::create(store, name + ".ffn", width, ffn_expansion * width, rng);
}

ag::Var TransformerBlock::operator()(const ag::Var& x, const ag::Var& cond) const {
  ag::Var h = ag::add(x, attention::self_attention(norm_attn_(x, cond), attn_));
  return ag::add(h, ffn_(norm_ffn_(h, cond)));
}

HourglassFlowModel::HourglassFlowModel(nn::ParameterStore& store, const ModelConfig& config,
                                       Rng& rng)
    : config_(config) {
  const int64_t levels = config.levels();
  const auto& w = config.widths;
  const Extent2 p = config.patch_size;
  const int64_t cond = config.mapping_width;
  auto width = [&](int64_t l) { return w[static_cast<size_t>(l)]; };
  auto heads = [&](int64_t l) { return config.num_heads_per_level[static_cast<size_t>(l)]; };
  auto kernel = [&](int64_t l) {
    return l == levels - 1 ? attention::kGlobal
                           : config.neighborhood_kernels[static_cast<size_t>(l)];
  };
  auto blocks = [&](const std::string& name, int64_t l) {
    std::vector<TransformerBlock> out;
    for (int64_t i = 0; i < config.depths[static_cast<size_t>(l)]; ++i) {
      out.emplace_back(store, name + level_name(".block", i), width(l), heads(l), kernel(l),
                       config.ffn_expansion, cond, config.use_rope, rng);
    }
    return out;
  };

  patch_in_ = nn::Linear::create(store, "hfm.patch_in",
                                 p.area() * (config.seg_channels + config.image_channels), width(0),
                                 rng);
  mapping_ = MappingNetwork(store, "hfm.mapping", config, rng);
  for (int64_t l = 0; l + 1 < levels; ++l) {
    encoder_.push_back(blocks(level_name("hfm.enc", l), l));
    merges_.push_back(
        nn::Linear::create(store, level_name("hfm.merge", l), 4 * width(l), width(l + 1), rng));
  }
  bottleneck_ = blocks("hfm.mid", levels - 1);
  splits_.resize(static_cast<size_t>(levels - 1));
  skip_alphas_.resize(static_cast<size_t>(levels - 1));
  decoder_.resize(static_cast<size_t>(levels - 1));
  for (int64_t l = levels - 2; l >= 0; --l) {
    const auto i = static_cast<size_t>(l);
    splits_[i] =
        nn::Linear::create(store, level_name("hfm.split", l), width(l + 1), 4 * width(l), rng);
    skip_alphas_[i] = store.add(level_name("hfm.skip", l) + ".alpha", Tensor({1}),
                                nn::ParamRole::kLerp);
    decoder_[i] = blocks(level_name("hfm.dec", l), l);
  }
  out_norm_ = nn::AdaRmsNorm::plain(store, "hfm.out_norm", width(0));
  head_ = nn::Linear::create(store, "hfm.head", width(0), p.area() * config.seg_channels, rng,
                             /*with_bias=*/true, /*zero_init=*/true);
}

ag::Var HourglassFlowModel::operator()(const ag::Var& xt, std::span<const double> t,
                                       const ag::Var& image, const FuseHook& fuse) const {
  const Tensor& xv = xt.value();
  const Tensor& iv = image.value();
  const ModelConfig& c = config_;
  if (xv.rank() != 4 || xv.channels() != c.seg_channels || xv.height() != c.input_size.height ||
      xv.width() != c.input_size.width) {
    throw std::invalid_argument("hfm: xt shape " + shape_string(xv.shape()) +
                                " does not match (B, " + std::to_string(c.input_size.height) +
                                ", " + std::to_string(c.input_size.width) + ", " +
                                std::to_string(c.seg_channels) + ")");
  }
  if (iv.rank() != 4 || iv.channels() != c.image_channels || iv.batch() != xv.batch() ||
      iv.height() != xv.height() || iv.width() != xv.width()) {
    throw std::invalid_argument("hfm: image shape " + shape_string(iv.shape()) +
                                " does not match xt " + shape_string(xv.shape()));
  }
  if (static_cast<int64_t>(t.size()) != xv.batch()) {
    throw std::invalid_argument("hfm: need one t per batch element");
  }
  if (c.hfe_enabled && !fuse) throw std::invalid_argument("hfm: HFE enabled but no features given");

  const int64_t levels = c.levels();
  ag::Var cond = mapping_(t);
  ag::Var h = patchify(ag::concat_channels(xt, image), c.patch_size, patch_in_);
  std::vector<ag::Var> skips;
  for (int64_t l = 0; l + 1 < levels; ++l) {
    for (const auto& block : encoder_[static_cast<size_t>(l)]) h = block(h, cond);
    if (fuse) h = fuse(l, h);
    skips.push_back(h);
    h = token_merge(h, merges_[static_cast<size_t>(l)]);
  }
  if (fuse && c.fuse_bottleneck) h = fuse(levels - 1, h);
  for (const auto& block : bottleneck_) h = block(h, cond);
  for (int64_t l = levels - 2; l >= 0; --l) {
    const auto i = static_cast<size_t>(l);
    h = skip_lerp(token_split(h, splits_[i]), skips[i], skip_alphas_[i]);
    for (const auto& block : decoder_[i]) h = block(h, cond);
  }
  return unpatchify(out_norm_(h, ag::Var()), c.patch_size, head_);
}

}  // namespace rfhit::hourglass
