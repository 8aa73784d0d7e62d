#include "rfhit/nn.h"

#include <cmath>
#include <stdexcept>

#include "rfhit/attention.h"

namespace rfhit::nn {

ag::Var ParameterStore::add(std::string name, Tensor init, ParamRole role) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name " + name);
  ag::Var var(std::move(init), true);
  items_.push_back({std::move(name), var, role});
  return var;
}

const Parameter* ParameterStore::find(const std::string& name) const {
  for (const auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

Parameter* ParameterStore::find(const std::string& name) {
  for (auto& p : items_)
    if (p.name == name) return &p;
  return nullptr;
}

int64_t ParameterStore::total_size() const {
  int64_t n = 0;
  for (const auto& p : items_) n += p.size();
  return n;
}

int64_t ParameterStore::size_with_prefix(const std::string& prefix) const {
  int64_t n = 0;
  for (const auto& p : items_)
    if (p.name.starts_with(prefix)) n += p.size();
  return n;
}

void ParameterStore::zero_grad() {
  for (auto& p : items_) p.var.zero_grad();
}

Tensor lecun_normal(int64_t in, int64_t out, Rng& rng) {
  Tensor w({in, out});
  const double sd = 1.0 / std::sqrt(static_cast<double>(in));
  for (double& v : w.values()) v = sd * rng.normal();
  return w;
}

Linear Linear::create(ParameterStore& store, const std::string& name, int64_t in, int64_t out,
                      Rng& rng, bool with_bias, bool zero_init) {
  Linear l;
  l.weight = store.add(name + ".weight", zero_init ? Tensor({in, out}) : lecun_normal(in, out, rng),
                       ParamRole::kWeight);
  if (with_bias) l.bias = store.add(name + ".bias", Tensor({out}), ParamRole::kBias);
  return l;
}

AdaRmsNorm AdaRmsNorm::conditioned(ParameterStore& store, const std::string& name,
                                   int64_t channels, int64_t cond_width, Rng& rng) {
  AdaRmsNorm n;
  n.cond_proj = Linear::create(store, name + ".cond", cond_width, channels, rng, false, true);
  return n;
}

AdaRmsNorm AdaRmsNorm::plain(ParameterStore& store, const std::string& name, int64_t channels) {
  AdaRmsNorm n;
  n.gain = store.add(name + ".gain", Tensor({1, channels}), ParamRole::kGain);
  return n;
}

ag::Var AdaRmsNorm::operator()(const ag::Var& x, const ag::Var& cond) const {
  if (is_conditioned()) {
    if (!cond.defined()) throw std::invalid_argument("AdaRmsNorm: conditioning vector required");
    return attention::ada_rms_norm(x, cond_proj(cond));
  }
  return attention::ada_rms_norm(x, gain);
}

FeedForward FeedForward::create(ParameterStore& store, const std::string& name, int64_t width,
                                int64_t hidden, Rng& rng) {
  FeedForward f;
  f.up = Linear::create(store, name + ".up", width, 2 * hidden, rng);
  f.down = Linear::create(store, name + ".down", hidden, width, rng);
  return f;
}

}  // namespace rfhit::nn
