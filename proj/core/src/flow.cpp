#include "rfhit/flow.h"

#include <string>

namespace rfhit::flow {
namespace {

void require_finite(const Tensor& t, const char* what) {
  if (!t.all_finite()) throw std::invalid_argument(std::string(what) + ": non-finite input");
}

}  // namespace

void check(const FlowSample& s) {
  require_same_shape(s.x0, s.x1, "FlowSample x0/x1");
  if (s.x0.rank() != 4 || s.image.rank() != 4) {
    throw std::invalid_argument("FlowSample: tensors must be rank 4");
  }
  if (s.image.batch() != s.x0.batch() || s.image.height() != s.x0.height() ||
      s.image.width() != s.x0.width()) {
    throw std::invalid_argument("FlowSample: image " + shape_string(s.image.shape()) +
                                " does not match mask " + shape_string(s.x0.shape()));
  }
  if (static_cast<int64_t>(s.t.size()) != s.x0.batch()) {
    throw std::invalid_argument("FlowSample: need one t per batch element");
  }
  for (double t : s.t) {
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("FlowSample: t outside [0, 1]");
  }
}

Tensor interpolate(const Tensor& x0, const Tensor& x1, std::span<const double> t) {
  require_same_shape(x0, x1, "interpolate");
  if (x0.rank() < 1 || static_cast<int64_t>(t.size()) != x0.dim(0)) {
    throw std::invalid_argument("interpolate: need one t per batch element");
  }
  const int64_t per = x0.numel() / std::max<int64_t>(x0.dim(0), 1);
  Tensor xt(x0.shape());
  for (int64_t b = 0; b < x0.dim(0); ++b) {
    const double tb = t[static_cast<size_t>(b)];
    if (!(tb >= 0.0 && tb <= 1.0)) throw std::invalid_argument("interpolate: t outside [0, 1]");
    for (int64_t i = b * per; i < (b + 1) * per; ++i) xt[i] = tb * x1[i] + (1.0 - tb) * x0[i];
  }
  return xt;
}

Tensor interpolate(const Tensor& x0, const Tensor& x1, double t) {
  std::vector<double> ts(static_cast<size_t>(x0.rank() ? x0.dim(0) : 0), t);
  return interpolate(x0, x1, ts);
}

Tensor velocity_target(const Tensor& x0, const Tensor& x1) {
  require_same_shape(x0, x1, "velocity_target");
  return x1 - x0;
}

double rf_loss(const Tensor& pred, const Tensor& x0, const Tensor& x1) {
  require_same_shape(pred, x0, "rf_loss");
  require_same_shape(x0, x1, "rf_loss");
  require_finite(pred, "rf_loss");
  require_finite(x0, "rf_loss");
  require_finite(x1, "rf_loss");
  if (pred.numel() == 0) throw std::invalid_argument("rf_loss: empty input");
  double acc = 0.0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const double d = pred[i] - (x1[i] - x0[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(pred.numel());
}

ag::Var rf_loss(const ag::Var& pred, const Tensor& x0, const Tensor& x1) {
  require_same_shape(pred.value(), x0, "rf_loss");
  require_finite(pred.value(), "rf_loss");
  require_finite(x0, "rf_loss");
  require_finite(x1, "rf_loss");
  return ag::mse(pred, velocity_target(x0, x1));
}

std::vector<double> sample_time(int64_t batch, Rng& rng) {
  if (batch < 1) throw std::invalid_argument("sample_time: batch must be >= 1");
  std::vector<double> t(static_cast<size_t>(batch));
  for (double& v : t) v = rng.uniform();
  return t;
}

Tensor euler_sample(const VelocityField& v, Tensor x, int64_t steps) {
  if (steps < 1) throw std::invalid_argument("euler_sample: steps must be >= 1");
  const double dt = 1.0 / static_cast<double>(steps);
  for (int64_t k = 0; k < steps; ++k) {
    const double t = static_cast<double>(k) / static_cast<double>(steps);
    Tensor vel = v(x, t);
    require_same_shape(vel, x, "euler_sample velocity");
    for (int64_t i = 0; i < x.numel(); ++i) x[i] += dt * vel[i];
    if (!x.all_finite()) {
      throw NonFiniteError("euler_sample: non-finite state after step " + std::to_string(k), k);
    }
  }
  return x;
}

}  // namespace rfhit::flow
