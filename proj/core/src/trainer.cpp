#include "rfhit/trainer.h"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "rfhit/checkpoint.h"

namespace rfhit::train {
namespace {

// Stream keys; only their distinctness matters.
constexpr uint64_t kShuffleKey = 0x5348;
constexpr uint64_t kAugmentKey = 0x4147;
constexpr uint64_t kFlowKey = 0x464c;

optim::AdamWOptions adamw_options(const TrainConfig& c) {
  optim::AdamWOptions o;
  o.weight_decay = c.weight_decay;
  return o;
}

std::vector<size_t> epoch_order(uint64_t seed, int64_t epoch, size_t n) {
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  Rng rng = Rng::derive(seed, {kShuffleKey, static_cast<uint64_t>(epoch)});
  for (size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  return order;
}

}  // namespace

double train_step(RfHitModel& model, optim::AdamW& optimizer, const flow::FlowSample& batch,
                  double lr, double grad_clip) {
  flow::check(batch);
  auto& params = model.parameters();
  params.zero_grad();
  const Tensor xt = flow::interpolate(batch.x0, batch.x1, batch.t);
  const ag::Var pred = model.velocity(ag::Var(xt), batch.t, ag::Var(batch.image));
  if (!pred.value().all_finite()) throw std::domain_error("non-finite velocity");
  const ag::Var loss = flow::rf_loss(pred, batch.x0, batch.x1);
  const double value = loss.value()[0];
  if (!std::isfinite(value)) throw std::domain_error("non-finite loss");
  ag::backward(loss);
  optim::clip_grad_norm(params, grad_clip);
  optimizer.step(params, lr);
  params.zero_grad();
  return value;
}

int64_t steps_for_epochs(int64_t epochs, int64_t samples, int64_t batch_size) {
  if (epochs < 1 || samples < 1 || batch_size < 1) throw std::invalid_argument("steps_for_epochs: non-positive input");
  return epochs * ((samples + batch_size - 1) / batch_size);
}

Trainer::Trainer(RfHitModel& model, const TrainConfig& config, std::span<const data::SliceSample> samples,
                 int64_t total_steps)
    : model_(model),
      config_(config),
      samples_(samples),
      schedule_(optim::Schedule::make(config.learning_rate, total_steps, config.warmup_fraction)),
      optimizer_(model.parameters(), adamw_options(config)) {
  const auto problems = validate(config);
  if (!problems.empty()) throw std::invalid_argument("invalid train config: " + problems.front());
  if (samples.empty()) throw std::invalid_argument("trainer: no training samples");
}

std::vector<size_t> Trainer::batch_indices(int64_t step) const {
  const size_t n = samples_.size();
  const auto b = static_cast<size_t>(config_.batch_size);
  std::vector<size_t> out;
  out.reserve(b);
  int64_t cached_epoch = -1;
  std::vector<size_t> order;
  for (size_t i = 0; i < b; ++i) {
    const size_t pos = static_cast<size_t>(step) * b + i;
    const auto epoch = static_cast<int64_t>(pos / n);
    if (epoch != cached_epoch) {
      order = epoch_order(config_.seed, epoch, n);
      cached_epoch = epoch;
    }
    out.push_back(order[pos % n]);
  }
  return out;
}

flow::FlowSample Trainer::make_batch(int64_t step) const {
  const auto idx = batch_indices(step);
  std::vector<data::SliceSample> batch;
  batch.reserve(idx.size());
  for (size_t i = 0; i < idx.size(); ++i) {
    const auto& s = samples_[idx[i]];
    if (config_.augment.any()) {
      Rng rng = Rng::derive(config_.seed, {kAugmentKey, static_cast<uint64_t>(step), i});
      batch.push_back(data::augment(s, config_.augment, rng));
    } else {
      batch.push_back(s);
    }
  }
  std::vector<const data::SliceSample*> ptrs;
  for (const auto& s : batch) ptrs.push_back(&s);
  const int64_t classes = model_.config().seg_channels;
  flow::FlowSample fs;
  fs.image = data::stack_images(ptrs);
  fs.x1 = data::stack_one_hot(ptrs, classes);
  Rng rng = Rng::derive(config_.seed, {kFlowKey, static_cast<uint64_t>(step)});
  fs.t = flow::sample_time(static_cast<int64_t>(batch.size()), rng);
  fs.x0 = rng.normal_tensor(fs.x1.shape());
  return fs;
}

StepRecord Trainer::step() {
  if (done_ >= schedule_.total_steps) throw std::logic_error("trainer: step budget exhausted");
  const auto start = std::chrono::steady_clock::now();
  const int64_t k = done_;
  // Update k uses the rate at the end of its interval, so the first update
  // after a zero-rate warm-up start still moves the parameters.
  const double lr = schedule_.lr_at(k + 1);
  const flow::FlowSample batch = make_batch(k);
  double loss;
  try {
    loss = train_step(model_, optimizer_, batch, lr, config_.grad_clip);
  } catch (const std::domain_error&) {
    std::vector<std::string> ids;
    for (size_t i : batch_indices(k)) {
      ids.push_back(data::slice_stem(samples_[i].volume_id, samples_[i].slice_index));
    }
    std::string list;
    for (const auto& id : ids) list += (list.empty() ? "" : ", ") + id;
    throw TrainingError("non-finite loss at step " + std::to_string(k + 1) + " (lr " +
                            std::to_string(lr) + ", batch " + list + ")",
                        k + 1, lr, ids);
  }
  ++done_;
  wall_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return {done_, lr, loss, wall_};
}

void Trainer::run(int64_t until, const std::function<void(const StepRecord&)>& on_step) {
  until = std::min(until, schedule_.total_steps);
  while (done_ < until) {
    const StepRecord r = step();
    if (on_step) on_step(r);
  }
}

void Trainer::save(const std::filesystem::path& path, const RunConfig& run) const {
  RunConfig stored = run;
  stored.train = config_;
  ckpt::save(path, stored, model_, optimizer_, done_, schedule_.total_steps);
}

void Trainer::resume(const std::filesystem::path& path) {
  const ckpt::Header h = ckpt::load(path, model_, &optimizer_);
  if (h.total_steps != schedule_.total_steps) {
    throw std::invalid_argument(path.string() + ": checkpoint schedule has " + std::to_string(h.total_steps) +
                                " steps, trainer has " + std::to_string(schedule_.total_steps));
  }
  done_ = h.step;
}

void StepLog::append(const StepRecord& r) const {
  std::ofstream out(path_, std::ios::app);
  if (!out) throw std::runtime_error("cannot append to " + path_.string());
  const nlohmann::json j = {{"step", r.step}, {"lr", r.lr}, {"loss", r.loss}, {"wall", r.wall_seconds}};
  out << j.dump() << '\n';
}

std::vector<StepRecord> StepLog::read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::vector<StepRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({j.at("step").get<int64_t>(), j.at("lr").get<double>(), j.at("loss").get<double>(),
                   j.at("wall").get<double>()});
  }
  return out;
}

}  // namespace rfhit::train
