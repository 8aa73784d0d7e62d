#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rfhit/autograd.h"
#include "rfhit/random.h"

namespace rfhit::nn {

/// Weights decay; gains, biases and lerp coefficients do not.
enum class ParamRole { kWeight, kGain, kBias, kLerp };

struct Parameter {
  std::string name;
  ag::Var var;
  ParamRole role = ParamRole::kWeight;

  bool decays() const { return role == ParamRole::kWeight; }
  int64_t size() const { return var.value().numel(); }
};

/// Owns every trainable array of a model, in registration order.
class ParameterStore {
 public:
  ag::Var add(std::string name, Tensor init, ParamRole role);

  const std::vector<Parameter>& items() const { return items_; }
  std::vector<Parameter>& items() { return items_; }
  const Parameter* find(const std::string& name) const;
  Parameter* find(const std::string& name);

  int64_t total_size() const;
  /// Sum of sizes over parameters whose name starts with `prefix`.
  int64_t size_with_prefix(const std::string& prefix) const;
  void zero_grad();

 private:
  std::vector<Parameter> items_;
};

/// Initial values for a weight matrix of fan-in `in`.
Tensor lecun_normal(int64_t in, int64_t out, Rng& rng);

struct Linear {
  ag::Var weight;  // in x out
  ag::Var bias;    // out, optional

  static Linear create(ParameterStore& store, const std::string& name, int64_t in, int64_t out,
                       Rng& rng, bool with_bias = false, bool zero_init = false);
  ag::Var operator()(const ag::Var& x) const { return ag::linear(x, weight, bias); }
  int64_t in() const { return weight.value().dim(0); }
  int64_t out() const { return weight.value().dim(1); }
};

/// RMS normalisation with a channel scale (1 + s). In conditioned mode s is
/// a zero-initialised linear map of the conditioning vector; otherwise s is
/// a learned constant, also starting at zero.
struct AdaRmsNorm {
  Linear cond_proj;
  ag::Var gain;  // (1, C), unconditioned mode only

  static AdaRmsNorm conditioned(ParameterStore& store, const std::string& name, int64_t channels,
                                int64_t cond_width, Rng& rng);
  static AdaRmsNorm plain(ParameterStore& store, const std::string& name, int64_t channels);

  /// `cond` is (batch, cond_width) or undefined in plain mode.
  ag::Var operator()(const ag::Var& x, const ag::Var& cond) const;
  bool is_conditioned() const { return cond_proj.weight.defined(); }
};

/// Gated-GELU feed-forward: up to 2*hidden, gate, down to width.
struct FeedForward {
  Linear up;
  Linear down;

  static FeedForward create(ParameterStore& store, const std::string& name, int64_t width,
                            int64_t hidden, Rng& rng);
  ag::Var operator()(const ag::Var& x) const { return down(ag::geglu(up(x))); }
};

}  // namespace rfhit::nn
