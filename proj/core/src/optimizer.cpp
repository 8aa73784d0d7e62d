#include "rfhit/optimizer.h"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace rfhit::optim {

Schedule Schedule::make(double base_lr, int64_t total_steps, double warmup_fraction) {
  if (total_steps < 1) throw std::invalid_argument("schedule needs at least one step");
  Schedule s;
  s.base_lr = base_lr;
  s.total_steps = total_steps;
  s.warmup_steps = static_cast<int64_t>(std::llround(warmup_fraction * static_cast<double>(total_steps)));
  if (warmup_fraction > 0.0) s.warmup_steps = std::max<int64_t>(s.warmup_steps, 1);
  s.warmup_steps = std::min(s.warmup_steps, total_steps - 1);
  return s;
}

double Schedule::lr_at(int64_t step) const {
  if (step < 0 || step > total_steps) {
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + "]");
  }
  if (step < warmup_steps) return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(const nn::ParameterStore& store, AdamWOptions options) : options_(options) {
  for (const auto& p : store.items()) {
    m_.emplace_back(p.var.shape());
    v_.emplace_back(p.var.shape());
  }
}

void AdamW::step(nn::ParameterStore& store, double lr) {
  auto& items = store.items();
  if (items.size() != m_.size()) throw std::logic_error("AdamW: parameter set changed");
  ++t_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (size_t i = 0; i < items.size(); ++i) {
    ag::Var& var = items[i].var;
    Tensor& w = var.mutable_value();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    const bool has_grad = var.has_grad();
    const double decay = items[i].decays() ? lr * options_.weight_decay : 0.0;
    for (int64_t j = 0; j < w.numel(); ++j) {
      const double g = has_grad ? var.grad()[j] : 0.0;
      m[j] = b1 * m[j] + (1.0 - b1) * g;
      v[j] = b2 * v[j] + (1.0 - b2) * g * g;
      w[j] -= decay * w[j];
      w[j] -= lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + options_.epsilon);
    }
  }
}

double global_grad_norm(const nn::ParameterStore& store) {
  double sq = 0.0;
  for (const auto& p : store.items()) {
    if (!p.var.has_grad()) continue;
    for (double g : p.var.grad().values()) sq += g * g;
  }
  return std::sqrt(sq);
}

double clip_grad_norm(nn::ParameterStore& store, double max_norm) {
  const double norm = global_grad_norm(store);
  if (max_norm <= 0.0 || norm <= max_norm) return norm;
  const double s = max_norm / norm;
  for (auto& p : store.items()) {
    if (p.var.has_grad()) p.var.node()->grad *= s;
  }
  return norm;
}

}  // namespace rfhit::optim
