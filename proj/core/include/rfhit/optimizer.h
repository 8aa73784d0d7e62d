#pragma once

#include <cstdint>
#include <vector>

#include "rfhit/nn.h"

namespace rfhit::optim {

/// Linear warm-up to base_lr over warmup_steps, then cosine decay to 0 at
/// total_steps.
struct Schedule {
  int64_t total_steps = 1;
  int64_t warmup_steps = 0;
  double base_lr = 1e-4;

  /// warmup_steps = round(fraction * total), at least 1 when fraction > 0.
  static Schedule make(double base_lr, int64_t total_steps, double warmup_fraction);
  /// Throws std::out_of_range outside [0, total_steps].
  double lr_at(int64_t step) const;
};

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay applied to decaying parameters only.
class AdamW {
 public:
  AdamW() = default;
  AdamW(const nn::ParameterStore& store, AdamWOptions options);

  /// One update from the gradients currently held by the parameters; a
  /// parameter without gradient is treated as having a zero gradient.
  void step(nn::ParameterStore& store, double lr);

  int64_t steps_taken() const { return t_; }
  const AdamWOptions& options() const { return options_; }
  std::vector<Tensor>& first_moments() { return m_; }
  std::vector<Tensor>& second_moments() { return v_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void set_steps_taken(int64_t t) { t_ = t; }

 private:
  AdamWOptions options_;
  int64_t t_ = 0;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
};

/// L2 norm over all parameter gradients.
double global_grad_norm(const nn::ParameterStore& store);
/// Rescales gradients so their global norm is at most max_norm; returns the
/// norm before clipping. Non-positive max_norm leaves gradients untouched.
double clip_grad_norm(nn::ParameterStore& store, double max_norm);

}  // namespace rfhit::optim
