#pragma once

#include <optional>
#include <span>

#include "rfhit/config.h"
#include "rfhit/hfe.h"
#include "rfhit/hourglass.h"
#include "rfhit/nn.h"

namespace rfhit {

/// The flow model together with its optional image encoder, sharing one
/// parameter store. Parameter handles are shared, so the type is move-only.
class RfHitModel {
 public:
  explicit RfHitModel(const ModelConfig& config, uint64_t init_seed = 0);
  RfHitModel(RfHitModel&&) = default;
  RfHitModel& operator=(RfHitModel&&) = default;
  RfHitModel(const RfHitModel&) = delete;
  RfHitModel& operator=(const RfHitModel&) = delete;

  const ModelConfig& config() const { return config_; }
  nn::ParameterStore& parameters() { return store_; }
  const nn::ParameterStore& parameters() const { return store_; }
  bool has_encoder() const { return encoder_.has_value(); }

  /// Encoder features of `image`; empty when the encoder is disabled.
  hourglass::LevelFeatures encode(const ag::Var& image) const;
  ag::Var velocity(const ag::Var& xt, std::span<const double> t, const ag::Var& image,
                   const hourglass::LevelFeatures& features) const;
  /// Encodes the image and evaluates the velocity in one pass.
  ag::Var velocity(const ag::Var& xt, std::span<const double> t, const ag::Var& image) const;

  int64_t flow_parameter_count() const;
  int64_t encoder_parameter_count() const;

  /// Copies parameter values from a model with the same configuration.
  void load_values_from(const RfHitModel& other);

 private:
  ModelConfig config_;
  nn::ParameterStore store_;
  hourglass::HourglassFlowModel flow_;
  std::optional<hfe::HierarchicalFeatureEncoder> encoder_;
};

}  // namespace rfhit
