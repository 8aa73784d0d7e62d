#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "rfhit/tensor.h"

namespace rfhit::ag {

struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  /// Gradient storage, zero-filled on first use.
  Tensor& grad_buffer();
  void accumulate(const Tensor& g);
};

/// Handle to a value in the reverse-mode graph. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }

  /// Accumulated gradient; empty tensor if no gradient reached this node.
  const Tensor& grad() const { return node_->grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad = Tensor(); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Runs reverse accumulation from a single-element output.
void backward(const Var& output);

bool grad_enabled();

/// Disables graph construction on this thread while alive.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Builds a result node. `fn` runs during backward with the result node; it
/// reads inputs through node.parents in the order given here.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> fn);

// ---- generic differentiable ops -------------------------------------------

/// x[..., in] * weight[in, out] (+ bias[out]).
Var linear(const Var& x, const Var& weight, const Var& bias = Var());
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);

double squash(double raw);

/// (1 - a) * x + a * y with a = squash(raw), raw a single-element variable.
Var lerp(const Var& x, const Var& y, const Var& raw);

/// Splits the last dim into value and gate halves: value * gelu(gate).
Var geglu(const Var& x);

/// Concatenates along the last (channel) dim.
Var concat_channels(const Var& a, const Var& b);

/// (B, H, W, C) -> (B, H/fy, W/fx, fy*fx*C); channel order (dy, dx, c).
Var space_to_depth(const Var& x, int64_t fy, int64_t fx);
/// Inverse of space_to_depth.
Var depth_to_space(const Var& x, int64_t fy, int64_t fx);

/// Mean over all elements of (pred - target)^2.
Var mse(const Var& pred, const Tensor& target);

// Forward-only helpers shared by kernels and tests.
Tensor space_to_depth(const Tensor& x, int64_t fy, int64_t fx);
Tensor depth_to_space(const Tensor& x, int64_t fy, int64_t fx);

}  // namespace rfhit::ag
