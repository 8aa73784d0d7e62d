#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rfhit/config.h"
#include "rfhit/data.h"
#include "rfhit/flow.h"
#include "rfhit/model.h"
#include "rfhit/optimizer.h"

namespace rfhit::train {

/// Raised when a step produces a non-finite loss.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, int64_t step, double lr, std::vector<std::string> batch)
      : std::runtime_error(what), step_(step), lr_(lr), batch_(std::move(batch)) {}
  int64_t step() const { return step_; }
  double lr() const { return lr_; }
  const std::vector<std::string>& batch() const { return batch_; }

 private:
  int64_t step_;
  double lr_;
  std::vector<std::string> batch_;
};

/// One optimisation step on a prepared batch: forward, rf loss, backward,
/// optional clipping, AdamW update. Returns the loss before the update.
/// Throws std::domain_error (without updating) if the loss is not finite.
double train_step(RfHitModel& model, optim::AdamW& optimizer, const flow::FlowSample& batch,
                  double lr, double grad_clip);

struct StepRecord {
  int64_t step = 0;  // 1-based index of the completed update
  double lr = 0.0;
  double loss = 0.0;
  double wall_seconds = 0.0;
};

/// Steps needed for `epochs` passes over `samples` at `batch_size`.
int64_t steps_for_epochs(int64_t epochs, int64_t samples, int64_t batch_size);

/// Drives training over a fixed sample set. Every random draw of update k
/// (batch order, augmentation, t, x0) comes from streams keyed by (seed, k),
/// so a resumed run reproduces the uninterrupted one.
class Trainer {
 public:
  Trainer(RfHitModel& model, const TrainConfig& config, std::span<const data::SliceSample> samples,
          int64_t total_steps);

  /// Runs the next update and returns its record.
  StepRecord step();
  /// Steps until `until` updates are done (clamped to total_steps).
  void run(int64_t until, const std::function<void(const StepRecord&)>& on_step = {});

  int64_t steps_done() const { return done_; }
  int64_t total_steps() const { return schedule_.total_steps; }
  const optim::Schedule& schedule() const { return schedule_; }
  optim::AdamW& optimizer() { return optimizer_; }
  const TrainConfig& config() const { return config_; }

  /// Sample indices of the batch for update `step` (0-based): consecutive
  /// slices of per-epoch shuffles.
  std::vector<size_t> batch_indices(int64_t step) const;
  /// The flow batch update `step` trains on.
  flow::FlowSample make_batch(int64_t step) const;

  void save(const std::filesystem::path& path, const RunConfig& run) const;
  /// Restores parameters, optimizer moments and the step counter.
  void resume(const std::filesystem::path& path);

 private:
  RfHitModel& model_;
  TrainConfig config_;
  std::span<const data::SliceSample> samples_;
  optim::Schedule schedule_;
  optim::AdamW optimizer_;
  int64_t done_ = 0;
  double wall_ = 0.0;
};

/// Appends one JSON object per line.
class StepLog {
 public:
  explicit StepLog(std::filesystem::path path) : path_(std::move(path)) {}
  void append(const StepRecord& record) const;
  static std::vector<StepRecord> read(const std::filesystem::path& path);

 private:
  std::filesystem::path path_;
};

}  // namespace rfhit::train
