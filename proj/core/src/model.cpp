#include "rfhit/model.h"

#include <stdexcept>

namespace rfhit {
namespace {

const ModelConfig& checked(const ModelConfig& config) {
  const auto violations = validate(config);
  if (!violations.empty()) {
    std::string msg = "invalid model config:";
    for (const auto& v : violations) msg += "\n  " + v;
    throw std::invalid_argument(msg);
  }
  return config;
}

}  // namespace

RfHitModel::RfHitModel(const ModelConfig& config, uint64_t init_seed) : config_(checked(config)) {
  Rng flow_rng = Rng::derive(init_seed, {1});
  flow_ = hourglass::HourglassFlowModel(store_, config_, flow_rng);
  if (config_.hfe_enabled) {
    Rng enc_rng = Rng::derive(init_seed, {2});
    encoder_.emplace(store_, config_, enc_rng);
  }
}

hourglass::LevelFeatures RfHitModel::encode(const ag::Var& image) const {
  if (!encoder_) return {};
  return (*encoder_)(image);
}

ag::Var RfHitModel::velocity(const ag::Var& xt, std::span<const double> t, const ag::Var& image,
                             const hourglass::LevelFeatures& features) const {
  if (!encoder_) return flow_(xt, t, image);
  if (static_cast<int64_t>(features.size()) != encoder_->feature_levels()) {
    throw std::invalid_argument("velocity: expected " +
                                std::to_string(encoder_->feature_levels()) +
                                " encoder feature levels, got " + std::to_string(features.size()));
  }
  return flow_(xt, t, image, [this, &features](int64_t level, const ag::Var& main) {
    return encoder_->fuse_level(level, main, features);
  });
}

ag::Var RfHitModel::velocity(const ag::Var& xt, std::span<const double> t,
                             const ag::Var& image) const {
  return velocity(xt, t, image, encode(image));
}

int64_t RfHitModel::flow_parameter_count() const {
  return store_.size_with_prefix(hourglass::HourglassFlowModel::kPrefix);
}

int64_t RfHitModel::encoder_parameter_count() const {
  return store_.size_with_prefix(hfe::HierarchicalFeatureEncoder::kPrefix);
}

void RfHitModel::load_values_from(const RfHitModel& other) {
  if (!(other.config_ == config_)) throw std::invalid_argument("load_values_from: config mismatch");
  auto& mine = store_.items();
  const auto& theirs = other.store_.items();
  for (size_t i = 0; i < mine.size(); ++i) mine[i].var.mutable_value() = theirs[i].var.value();
}

}  // namespace rfhit
