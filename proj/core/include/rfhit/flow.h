#pragma once

#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "rfhit/autograd.h"
#include "rfhit/random.h"
#include "rfhit/tensor.h"

namespace rfhit::flow {

/// One rectified-flow training triple plus per-element times.
struct FlowSample {
  Tensor x0;     // noise, batch x C_seg x H x W
  Tensor x1;     // one-hot target mask, same shape as x0
  Tensor image;  // conditioning image, batch x C_I x H x W
  std::vector<double> t;
};

/// Checks the FlowSample shape and range invariants; throws on violation.
void check(const FlowSample& sample);

/// Velocity evaluated at state x and time t. Conditioning (image, encoder
/// features) is bound by the caller.
using VelocityField = std::function<Tensor(const Tensor& x, double t)>;

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(const std::string& what, int64_t step)
      : std::runtime_error(what), step_(step) {}
  int64_t step() const { return step_; }

 private:
  int64_t step_;
};

/// x_t = t * x1 + (1 - t) * x0, with t indexed by the leading (batch) dim.
Tensor interpolate(const Tensor& x0, const Tensor& x1, std::span<const double> t);
Tensor interpolate(const Tensor& x0, const Tensor& x1, double t);

/// x1 - x0.
Tensor velocity_target(const Tensor& x0, const Tensor& x1);

/// Mean over all elements of (pred - (x1 - x0))^2.
double rf_loss(const Tensor& pred, const Tensor& x0, const Tensor& x1);
/// Differentiable form of rf_loss.
ag::Var rf_loss(const ag::Var& pred, const Tensor& x0, const Tensor& x1);

/// i.i.d. uniform times on [0, 1).
std::vector<double> sample_time(int64_t batch, Rng& rng);

inline constexpr int64_t kDefaultEulerSteps = 3;

/// Forward Euler on the uniform grid t_k = k/N, left endpoint:
/// x <- x + (1/N) v(x, t_k), k = 0..N-1.
Tensor euler_sample(const VelocityField& v, Tensor x0, int64_t steps = kDefaultEulerSteps);

}  // namespace rfhit::flow
