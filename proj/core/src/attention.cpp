#include "rfhit/attention.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>

namespace rfhit::attention {
namespace {

void check_kernel(int64_t kernel) {
  if (kernel != kGlobal && (kernel < 1 || kernel % 2 == 0)) {
    throw std::invalid_argument("attention: kernel " + std::to_string(kernel) +
                                " must be odd (or global)");
  }
}

// cos/sin of the axial rotation angles for every row and column index.
class RopeTable {
 public:
  RopeTable(int64_t height, int64_t width, int64_t head_dim) : quarter_(head_dim / 4) {
    if (head_dim % 4 != 0) {
      throw std::invalid_argument("axial_rope: head dim " + std::to_string(head_dim) +
                                  " not divisible by 4");
    }
    fill(height, row_cos_, row_sin_);
    fill(width, col_cos_, col_sin_);
  }

  // Rotates one head vector in place; inverse applies the opposite angle.
  template <typename T>
  void rotate(T* u, int64_t y, int64_t x, bool inverse) const {
    const double sign = inverse ? -1.0 : 1.0;
    const int64_t q = quarter_;
    for (int64_t j = 0; j < q; ++j) {
      const double c = row_cos_[static_cast<size_t>(y * q + j)];
      const double s = sign * row_sin_[static_cast<size_t>(y * q + j)];
      const double a = u[j], b = u[j + q];
      u[j] = static_cast<T>(a * c - b * s);
      u[j + q] = static_cast<T>(a * s + b * c);
    }
    T* w = u + 2 * q;
    for (int64_t j = 0; j < q; ++j) {
      const double c = col_cos_[static_cast<size_t>(x * q + j)];
      const double s = sign * col_sin_[static_cast<size_t>(x * q + j)];
      const double a = w[j], b = w[j + q];
      w[j] = static_cast<T>(a * c - b * s);
      w[j + q] = static_cast<T>(a * s + b * c);
    }
  }

 private:
  void fill(int64_t extent, std::vector<double>& cos_out, std::vector<double>& sin_out) const {
    cos_out.resize(static_cast<size_t>(extent * quarter_));
    sin_out.resize(cos_out.size());
    for (int64_t p = 0; p < extent; ++p) {
      for (int64_t j = 0; j < quarter_; ++j) {
        const double freq = std::pow(kRopeBase, -static_cast<double>(j) / static_cast<double>(quarter_));
        const double angle = static_cast<double>(p) * freq;
        cos_out[static_cast<size_t>(p * quarter_ + j)] = std::cos(angle);
        sin_out[static_cast<size_t>(p * quarter_ + j)] = std::sin(angle);
      }
    }
  }

  int64_t quarter_;
  std::vector<double> row_cos_, row_sin_, col_cos_, col_sin_;
};

struct SavedAttention {
  Geometry geom;
  bool rope = false;
  std::vector<double> q, k, v, probs;
};

// Splits a fused (B, H, W, 3*width) projection into head-major q, k, v,
// rotating q and k when requested.
void gather_heads(const Tensor& qkv, const Geometry& g, bool rope, std::vector<double>& q,
                  std::vector<double>& k, std::vector<double>& v) {
  const int64_t tokens = g.tokens();
  const int64_t hd = g.head_dim;
  const int64_t width = g.heads * hd;
  const size_t n = static_cast<size_t>(g.batch * g.heads * tokens * hd);
  q.resize(n);
  k.resize(n);
  v.resize(n);
  std::unique_ptr<RopeTable> table;
  if (rope) table = std::make_unique<RopeTable>(g.height, g.width, hd);
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t t = 0; t < tokens; ++t) {
      const double* src = qkv.data() + (b * tokens + t) * 3 * width;
      for (int64_t h = 0; h < g.heads; ++h) {
        const size_t dst = static_cast<size_t>(((b * g.heads + h) * tokens + t) * hd);
        std::copy_n(src + h * hd, hd, q.data() + dst);
        std::copy_n(src + width + h * hd, hd, k.data() + dst);
        std::copy_n(src + 2 * width + h * hd, hd, v.data() + dst);
        if (table) {
          table->rotate(q.data() + dst, t / g.width, t % g.width, false);
          table->rotate(k.data() + dst, t / g.width, t % g.width, false);
        }
      }
    }
}

}  // namespace

AxisWindow axis_window(int64_t index, int64_t extent, int64_t kernel) {
  if (kernel == kGlobal || kernel >= extent) return {0, extent};
  const int64_t start = std::clamp<int64_t>(index - kernel / 2, 0, extent - kernel);
  return {start, kernel};
}

int64_t window_size(int64_t height, int64_t width, int64_t kernel) {
  return axis_window(0, height, kernel).length * axis_window(0, width, kernel).length;
}

template <typename T>
void attend(const Geometry& g, std::span<const T> q, std::span<const T> k, std::span<const T> v,
            std::span<T> out, std::span<T> probs) {
  check_kernel(g.kernel);
  const int64_t tokens = g.tokens();
  const int64_t hd = g.head_dim;
  const int64_t keys = g.keys_per_query();
  const auto expected = static_cast<size_t>(g.batch * g.heads * tokens * hd);
  if (q.size() != expected || k.size() != expected || v.size() != expected || out.size() != expected) {
    throw std::invalid_argument("attend: buffer sizes do not match geometry");
  }
  if (!probs.empty() && probs.size() != static_cast<size_t>(g.batch * g.heads * tokens * keys)) {
    throw std::invalid_argument("attend: probability buffer has the wrong size");
  }
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  std::vector<T> scores(static_cast<size_t>(keys));

  for (int64_t bh = 0; bh < g.batch * g.heads; ++bh) {
    const T* qb = q.data() + bh * tokens * hd;
    const T* kb = k.data() + bh * tokens * hd;
    const T* vb = v.data() + bh * tokens * hd;
    T* ob = out.data() + bh * tokens * hd;
    for (int64_t y = 0; y < g.height; ++y) {
      const AxisWindow wy = axis_window(y, g.height, g.kernel);
      for (int64_t x = 0; x < g.width; ++x) {
        const AxisWindow wx = axis_window(x, g.width, g.kernel);
        const int64_t qi = y * g.width + x;
        const T* qv = qb + qi * hd;
        T max_score = -std::numeric_limits<T>::infinity();
        int64_t n = 0;
        for (int64_t ky = wy.start; ky < wy.start + wy.length; ++ky) {
          for (int64_t kx = wx.start; kx < wx.start + wx.length; ++kx, ++n) {
            const T* kv = kb + (ky * g.width + kx) * hd;
            T dot = 0;
            for (int64_t d = 0; d < hd; ++d) dot += qv[d] * kv[d];
            scores[static_cast<size_t>(n)] = dot * scale;
            max_score = std::max(max_score, scores[static_cast<size_t>(n)]);
          }
        }
        T denom = 0;
        for (T& s : scores) {
          s = std::exp(s - max_score);
          denom += s;
        }
        T* o = ob + qi * hd;
        std::fill(o, o + hd, T{0});
        n = 0;
        for (int64_t ky = wy.start; ky < wy.start + wy.length; ++ky) {
          for (int64_t kx = wx.start; kx < wx.start + wx.length; ++kx, ++n) {
            const T p = scores[static_cast<size_t>(n)] / denom;
            scores[static_cast<size_t>(n)] = p;
            const T* vv = vb + (ky * g.width + kx) * hd;
            for (int64_t d = 0; d < hd; ++d) o[d] += p * vv[d];
          }
        }
        if (!probs.empty()) {
          std::copy(scores.begin(), scores.end(), probs.data() + (bh * tokens + qi) * keys);
        }
      }
    }
  }
  if (CostCounter* c = active_cost_counter()) {
    const int64_t comparisons = g.batch * g.heads * tokens * keys;
    c->key_comparisons += comparisons;
    c->softmax_elements += comparisons;
    c->macs += 2 * comparisons * hd;
  }
}

template void attend<float>(const Geometry&, std::span<const float>, std::span<const float>,
                            std::span<const float>, std::span<float>, std::span<float>);
template void attend<double>(const Geometry&, std::span<const double>, std::span<const double>,
                             std::span<const double>, std::span<double>, std::span<double>);

ag::Var ada_rms_norm(const ag::Var& x, const ag::Var& scale) {
  const Tensor& xv = x.value();
  const Tensor& sv = scale.value();
  if (xv.rank() < 2) throw std::invalid_argument("ada_rms_norm: input must have a batch dim");
  const int64_t batch = xv.dim(0);
  const int64_t c = xv.shape().back();
  if (sv.rank() != 2 || sv.dim(1) != c || (sv.dim(0) != 1 && sv.dim(0) != batch)) {
    throw std::invalid_argument("ada_rms_norm: scale " + shape_string(sv.shape()) +
                                " does not match input " + shape_string(xv.shape()));
  }
  const int64_t rows = xv.numel() / c;
  const int64_t rows_per_batch = rows / batch;
  const bool shared = sv.dim(0) == 1;
  auto inv_rms = std::make_shared<std::vector<double>>(static_cast<size_t>(rows));
  Tensor y(xv.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const double* in = xv.data() + r * c;
    double ms = 0.0;
    for (int64_t j = 0; j < c; ++j) ms += in[j] * in[j];
    const double ir = 1.0 / std::sqrt(ms / static_cast<double>(c) + kRmsEpsilon);
    (*inv_rms)[static_cast<size_t>(r)] = ir;
    const double* s = sv.data() + (shared ? 0 : r / rows_per_batch) * c;
    double* out = y.data() + r * c;
    for (int64_t j = 0; j < c; ++j) out[j] = in[j] * ir * (1.0 + s[j]);
  }
  if (CostCounter* counter = active_cost_counter()) counter->norm_elements += xv.numel();

  return ag::make_result(std::move(y), {x, scale},
                         [inv_rms, rows, rows_per_batch, c, shared](ag::Node& self) {
    ag::Node& xn = *self.parents[0];
    ag::Node& sn = *self.parents[1];
    const double inv_c = 1.0 / static_cast<double>(c);
    for (int64_t r = 0; r < rows; ++r) {
      const double* in = xn.value.data() + r * c;
      const double* g = self.grad.data() + r * c;
      const int64_t srow = shared ? 0 : r / rows_per_batch;
      const double* s = sn.value.data() + srow * c;
      const double ir = (*inv_rms)[static_cast<size_t>(r)];
      if (xn.requires_grad) {
        double dot = 0.0;
        for (int64_t j = 0; j < c; ++j) dot += g[j] * (1.0 + s[j]) * in[j];
        const double k = dot * ir * ir * ir * inv_c;
        double* dx = xn.grad_buffer().data() + r * c;
        for (int64_t j = 0; j < c; ++j) dx[j] += ir * (1.0 + s[j]) * g[j] - in[j] * k;
      }
      if (sn.requires_grad) {
        double* ds = sn.grad_buffer().data() + srow * c;
        for (int64_t j = 0; j < c; ++j) ds[j] += g[j] * in[j] * ir;
      }
    }
  });
}

Tensor axial_rope(const Tensor& x, int64_t heads) {
  if (x.rank() != 4) throw std::invalid_argument("axial_rope: rank-4 input required");
  if (heads < 1 || x.channels() % heads != 0) {
    throw std::invalid_argument("axial_rope: channels not divisible by heads");
  }
  const int64_t hd = x.channels() / heads;
  const RopeTable table(x.height(), x.width(), hd);
  Tensor y = x;
  for (int64_t b = 0; b < x.batch(); ++b)
    for (int64_t yy = 0; yy < x.height(); ++yy)
      for (int64_t xx = 0; xx < x.width(); ++xx)
        for (int64_t h = 0; h < heads; ++h) {
          table.rotate(&y.at(b, h * hd, yy, xx), yy, xx, false);
        }
  return y;
}

ag::Var axial_rope(const ag::Var& x, int64_t heads) {
  return ag::make_result(axial_rope(x.value(), heads), {x}, [heads](ag::Node& self) {
    const Tensor& g = self.grad;
    const int64_t hd = g.channels() / heads;
    const RopeTable table(g.height(), g.width(), hd);
    Tensor back = g;
    for (int64_t b = 0; b < g.batch(); ++b)
      for (int64_t yy = 0; yy < g.height(); ++yy)
        for (int64_t xx = 0; xx < g.width(); ++xx)
          for (int64_t h = 0; h < heads; ++h) table.rotate(&back.at(b, h * hd, yy, xx), yy, xx, true);
    self.parents[0]->accumulate(back);
  });
}

ag::Var attend_qkv(const ag::Var& qkv, int64_t heads, int64_t kernel, bool rope) {
  check_kernel(kernel);
  const Tensor& in = qkv.value();
  if (in.rank() != 4 || in.channels() % 3 != 0) {
    throw std::invalid_argument("attend_qkv: expected (B, H, W, 3*width), got " +
                                shape_string(in.shape()));
  }
  const int64_t width = in.channels() / 3;
  if (heads < 1 || width % heads != 0) {
    throw std::invalid_argument("attend_qkv: width " + std::to_string(width) +
                                " not divisible by heads " + std::to_string(heads));
  }
  auto saved = std::make_shared<SavedAttention>();
  Geometry& g = saved->geom;
  g = {in.batch(), heads, in.height(), in.width(), width / heads, kernel};
  saved->rope = rope;
  const int64_t tokens = g.tokens();
  const int64_t hd = g.head_dim;
  gather_heads(in, g, rope, saved->q, saved->k, saved->v);
  saved->probs.resize(static_cast<size_t>(g.batch * heads * tokens * g.keys_per_query()));
  const size_t n = saved->q.size();

  std::vector<double> out_hm(n);
  attend<double>(g, saved->q, saved->k, saved->v, out_hm, saved->probs);
  Tensor out({g.batch, g.height, g.width, width});
  for (int64_t b = 0; b < g.batch; ++b)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t t = 0; t < tokens; ++t) {
        std::copy_n(out_hm.data() + ((b * heads + h) * tokens + t) * hd, hd,
                    out.data() + (b * tokens + t) * width + h * hd);
      }

  return ag::make_result(std::move(out), {qkv}, [saved](ag::Node& self) {
    const Geometry& g = saved->geom;
    const int64_t tokens = g.tokens();
    const int64_t hd = g.head_dim;
    const int64_t width = g.heads * hd;
    const int64_t keys = g.keys_per_query();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const size_t n = saved->q.size();
    std::vector<double> dq(n, 0.0), dk(n, 0.0), dv(n, 0.0), dp(static_cast<size_t>(keys));
    const Tensor& dout = self.grad;

    for (int64_t b = 0; b < g.batch; ++b)
      for (int64_t h = 0; h < g.heads; ++h) {
        const int64_t base = (b * g.heads + h) * tokens;
        for (int64_t y = 0; y < g.height; ++y) {
          const AxisWindow wy = axis_window(y, g.height, g.kernel);
          for (int64_t x = 0; x < g.width; ++x) {
            const AxisWindow wx = axis_window(x, g.width, g.kernel);
            const int64_t qi = y * g.width + x;
            const double* go = dout.data() + (b * tokens + qi) * width + h * hd;
            const double* p = saved->probs.data() + (base + qi) * keys;
            int64_t m = 0;
            double weighted = 0.0;
            for (int64_t ky = wy.start; ky < wy.start + wy.length; ++ky)
              for (int64_t kx = wx.start; kx < wx.start + wx.length; ++kx, ++m) {
                const int64_t kj = base + ky * g.width + kx;
                const double* vv = saved->v.data() + kj * hd;
                double* dvv = dv.data() + kj * hd;
                double dot = 0.0;
                for (int64_t d = 0; d < hd; ++d) {
                  dot += go[d] * vv[d];
                  dvv[d] += p[m] * go[d];
                }
                dp[static_cast<size_t>(m)] = dot;
                weighted += p[m] * dot;
              }
            const double* qv = saved->q.data() + (base + qi) * hd;
            double* dqv = dq.data() + (base + qi) * hd;
            m = 0;
            for (int64_t ky = wy.start; ky < wy.start + wy.length; ++ky)
              for (int64_t kx = wx.start; kx < wx.start + wx.length; ++kx, ++m) {
                const double ds = p[m] * (dp[static_cast<size_t>(m)] - weighted) * scale;
                const int64_t kj = base + ky * g.width + kx;
                const double* kv = saved->k.data() + kj * hd;
                double* dkv = dk.data() + kj * hd;
                for (int64_t d = 0; d < hd; ++d) {
                  dqv[d] += ds * kv[d];
                  dkv[d] += ds * qv[d];
                }
              }
          }
        }
      }

    std::unique_ptr<RopeTable> table;
    if (saved->rope) table = std::make_unique<RopeTable>(g.height, g.width, hd);
    Tensor& dqkv = self.parents[0]->grad_buffer();
    for (int64_t b = 0; b < g.batch; ++b)
      for (int64_t t = 0; t < tokens; ++t) {
        double* dst = dqkv.data() + (b * tokens + t) * 3 * width;
        for (int64_t h = 0; h < g.heads; ++h) {
          const size_t src = static_cast<size_t>(((b * g.heads + h) * tokens + t) * hd);
          if (table) {
            table->rotate(dq.data() + src, t / g.width, t % g.width, true);
            table->rotate(dk.data() + src, t / g.width, t % g.width, true);
          }
          for (int64_t d = 0; d < hd; ++d) {
            dst[h * hd + d] += dq[src + static_cast<size_t>(d)];
            dst[width + h * hd + d] += dk[src + static_cast<size_t>(d)];
            dst[2 * width + h * hd + d] += dv[src + static_cast<size_t>(d)];
          }
        }
      }
  });
}

namespace {
void check_params(const AttentionParams& p) {
  if (p.heads < 1 || p.width % p.heads != 0) {
    throw std::invalid_argument("attention: width " + std::to_string(p.width) +
                                " not divisible by heads " + std::to_string(p.heads));
  }
  if (p.qkv_weight.shape() != Shape{p.width, 3 * p.width} ||
      p.out_weight.shape() != Shape{p.width, p.width}) {
    throw std::invalid_argument("attention: projection weights do not match width " +
                                std::to_string(p.width));
  }
}
}  // namespace

ag::Var neighborhood_attention(const ag::Var& x, int64_t kernel, const AttentionParams& params) {
  if (kernel == kGlobal || kernel % 2 == 0) {
    throw std::invalid_argument("neighborhood_attention: kernel " + std::to_string(kernel) +
                                " must be odd");
  }
  check_params(params);
  ag::Var qkv = ag::linear(x, params.qkv_weight);
  return ag::linear(attend_qkv(qkv, params.heads, kernel, params.rope), params.out_weight);
}

ag::Var global_attention(const ag::Var& x, const AttentionParams& params) {
  check_params(params);
  ag::Var qkv = ag::linear(x, params.qkv_weight);
  return ag::linear(attend_qkv(qkv, params.heads, kGlobal, params.rope), params.out_weight);
}

ag::Var self_attention(const ag::Var& x, const AttentionParams& params) {
  return params.kernel == kGlobal ? global_attention(x, params)
                                  : neighborhood_attention(x, params.kernel, params);
}

Tensor attention_weights(const Tensor& x, const AttentionParams& params) {
  check_params(params);
  ag::NoGradGuard no_grad;
  ag::Var qkv = ag::linear(ag::Var(x), params.qkv_weight);
  const Tensor& in = qkv.value();
  Geometry g{in.batch(), params.heads, in.height(), in.width(), params.head_dim(), params.kernel};
  std::vector<double> q, k, v;
  gather_heads(in, g, params.rope, q, k, v);
  std::vector<double> out(q.size());
  Tensor probs({g.batch, g.heads, g.tokens(), g.keys_per_query()});
  attend<double>(g, q, k, v, out, probs.values());
  return probs;
}

}  // namespace rfhit::attention
