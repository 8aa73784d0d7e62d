#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "rfhit/autograd.h"
#include "rfhit/cost_counter.h"
#include "rfhit/tensor.h"

namespace rfhit::attention {

/// Kernel value selecting full (global) attention.
inline constexpr int64_t kGlobal = 0;
inline constexpr double kRmsEpsilon = 1e-6;
inline constexpr double kRopeBase = 10000.0;

/// Key range [start, start + length) along one axis for a query at `index`.
///
/// The window is centred on the query and shifted inward at the borders so
/// that it never leaves the map; every query sees min(kernel, extent) keys
/// per axis. kGlobal covers the whole axis.
struct AxisWindow {
  int64_t start = 0;
  int64_t length = 0;
};
AxisWindow axis_window(int64_t index, int64_t extent, int64_t kernel);

/// Keys attended by every query on a height x width map.
int64_t window_size(int64_t height, int64_t width, int64_t kernel);

/// Shape of one attention problem. q, k, v are laid out head-major:
/// (batch, heads, height*width, head_dim).
struct Geometry {
  int64_t batch = 1;
  int64_t heads = 1;
  int64_t height = 1;
  int64_t width = 1;
  int64_t head_dim = 1;
  int64_t kernel = kGlobal;

  int64_t tokens() const { return height * width; }
  int64_t keys_per_query() const { return window_size(height, width, kernel); }
};

/// Softmax attention over each query's window. `probs`, when non-empty,
/// receives batch*heads*tokens*keys_per_query weights in window order.
/// Scores are scaled by 1/sqrt(head_dim) and stabilised by max-subtraction.
template <typename T>
void attend(const Geometry& g, std::span<const T> q, std::span<const T> k, std::span<const T> v,
            std::span<T> out, std::span<T> probs = {});

/// Parameters of one self-attention layer over a (B, H, W, width) map.
struct AttentionParams {
  int64_t width = 0;
  int64_t heads = 1;
  /// Odd window edge, or kGlobal.
  int64_t kernel = kGlobal;
  bool rope = true;
  ag::Var qkv_weight;  // width x 3*width
  ag::Var out_weight;  // width x width

  int64_t head_dim() const { return width / heads; }
};

/// y = x / sqrt(mean_c(x^2) + eps) * (1 + scale), normalising the last dim.
/// `scale` is (batch, C) or (1, C).
ag::Var ada_rms_norm(const ag::Var& x, const ag::Var& scale);

/// 2D axial rotary embedding of a (B, H, W, heads*head_dim) map. The first
/// half of each head rotates with the row index, the second half with the
/// column index.
ag::Var axial_rope(const ag::Var& x, int64_t heads);
Tensor axial_rope(const Tensor& x, int64_t heads);

/// Attention core on a fused (B, H, W, 3*width) projection laid out
/// [q | k | v]; applies the rotary embedding to q and k when `rope` is set.
ag::Var attend_qkv(const ag::Var& qkv, int64_t heads, int64_t kernel, bool rope);

/// Full layer: qkv projection, rotary embedding, windowed attention, output
/// projection. Requires an odd kernel >= 1.
ag::Var neighborhood_attention(const ag::Var& x, int64_t kernel, const AttentionParams& params);
/// Same layer with every token attending to every other token.
ag::Var global_attention(const ag::Var& x, const AttentionParams& params);
/// Dispatches on params.kernel.
ag::Var self_attention(const ag::Var& x, const AttentionParams& params);

/// Attention weights of the layer for inspection: (B, heads, tokens, keys).
Tensor attention_weights(const Tensor& x, const AttentionParams& params);

}  // namespace rfhit::attention
