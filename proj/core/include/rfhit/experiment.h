#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "rfhit/config.h"
#include "rfhit/data.h"
#include "rfhit/metrics.h"
#include "rfhit/trainer.h"

namespace rfhit::experiment {

/// Train / validation / test phantoms from independent streams.
struct DeskSplits {
  std::vector<data::SliceSample> train;
  std::vector<data::SliceSample> val;
  std::vector<data::SliceSample> test;
};

struct DeskData {
  Extent2 canvas{64, 64};
  int64_t classes = 4;
  int64_t slices_per_volume = 10;
  int64_t train_slices = 500;
  int64_t val_slices = 100;
  int64_t test_slices = 100;
  double noise = 0.08;
  uint64_t seed = 0;
};

/// Synthetic spec of one split ("train", "val" or "test").
data::SyntheticSpec split_spec(const DeskData& desk, const std::string& split);
DeskSplits make_splits(const DeskData& desk);

struct Outcome {
  std::vector<train::StepRecord> steps;
  std::vector<double> thresholds;  // calibrated at N = euler_steps
  metrics::EvalSummary summary;    // test split, N = euler_steps
  metrics::EvalSummary summary_one_step;  // test split, N = 1, same thresholds
};

/// Trains from scratch, calibrates on the validation split and scores the
/// test split.
Outcome train_and_evaluate(const RunConfig& config, const DeskSplits& splits, int64_t steps,
                           const std::function<void(const train::StepRecord&)>& on_step = {});

}  // namespace rfhit::experiment
