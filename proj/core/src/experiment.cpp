#include "rfhit/experiment.h"

#include "rfhit/pipeline.h"

namespace rfhit::experiment {
namespace {

int64_t volumes_for(int64_t slices, int64_t per_volume) { return (slices + per_volume - 1) / per_volume; }

metrics::EvalSummary score(const RfHitModel& model, const std::vector<data::SliceSample>& samples,
                           const std::vector<double>& thresholds, int64_t steps, uint64_t seed) {
  pipeline::SampleOptions opt;
  opt.euler_steps = steps;
  opt.seed = seed;
  const auto pred = pipeline::predict(model, samples, opt);
  const auto volumes = data::volumes_of(samples);
  return metrics::evaluate(pipeline::assemble(pred, volumes), pipeline::ground_truth(samples), thresholds);
}

}  // namespace

data::SyntheticSpec split_spec(const DeskData& desk, const std::string& split) {
  uint64_t key;
  int64_t slices;
  if (split == "train") {
    key = 1;
    slices = desk.train_slices;
  } else if (split == "val") {
    key = 2;
    slices = desk.val_slices;
  } else if (split == "test") {
    key = 3;
    slices = desk.test_slices;
  } else {
    throw std::invalid_argument("unknown split '" + split + "' (expected train, val or test)");
  }
  data::SyntheticSpec s;
  s.canvas = desk.canvas;
  s.classes = desk.classes;
  s.slices_per_volume = desk.slices_per_volume;
  s.volumes = volumes_for(slices, desk.slices_per_volume);
  s.noise = desk.noise;
  s.seed = Rng::derive(desk.seed, {key}).next_u64();
  s.volume_prefix = split;
  return s;
}

DeskSplits make_splits(const DeskData& desk) {
  return {data::generate_synthetic(split_spec(desk, "train")), data::generate_synthetic(split_spec(desk, "val")),
          data::generate_synthetic(split_spec(desk, "test"))};
}

Outcome train_and_evaluate(const RunConfig& config, const DeskSplits& splits, int64_t steps,
                           const std::function<void(const train::StepRecord&)>& on_step) {
  RfHitModel model(config.model, config.train.seed);
  train::Trainer trainer(model, config.train, splits.train, steps);
  Outcome out;
  trainer.run(steps, [&](const train::StepRecord& r) {
    out.steps.push_back(r);
    if (on_step) on_step(r);
  });

  pipeline::SampleOptions opt;
  opt.euler_steps = config.infer.euler_steps;
  opt.seed = config.train.seed;
  const auto val_pred = pipeline::predict(model, splits.val, opt);
  const auto val_volumes = pipeline::assemble(val_pred, data::volumes_of(splits.val));
  const auto val_truth = pipeline::ground_truth(splits.val);
  out.thresholds = metrics::calibrate_thresholds(val_volumes, val_truth, metrics::ThresholdGrid::from(config.infer.grid));
  out.summary = score(model, splits.test, out.thresholds, config.infer.euler_steps, config.train.seed);
  out.summary_one_step = score(model, splits.test, out.thresholds, 1, config.train.seed);
  return out;
}

}  // namespace rfhit::experiment
