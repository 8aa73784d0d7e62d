#include <benchmark/benchmark.h>

#include "rfhit/experiment.h"
#include "rfhit/flow.h"
#include "rfhit/model.h"
#include "rfhit/pipeline.h"
#include "rfhit/trainer.h"

namespace {

using namespace rfhit;

const char* const kPresets[] = {"unit", "tiny"};

void BM_VelocityForward(benchmark::State& state) {
  const ModelConfig c = preset(kPresets[state.range(0)]);
  const RfHitModel model(c, 1);
  Rng rng(2);
  const int64_t b = state.range(1);
  const ag::Var xt(rng.normal_tensor({b, c.input_size.height, c.input_size.width, c.seg_channels}));
  const ag::Var image(rng.normal_tensor({b, c.input_size.height, c.input_size.width, c.image_channels}));
  const std::vector<double> t(static_cast<size_t>(b), 0.5);
  ag::NoGradGuard no_grad;
  for (auto _ : state) benchmark::DoNotOptimize(model.velocity(xt, t, image));
  state.SetLabel(kPresets[state.range(0)]);
  state.SetItemsProcessed(state.iterations() * b);
}
BENCHMARK(BM_VelocityForward)->Args({0, 1})->Args({1, 1})->Args({1, 8})->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  RunConfig rc = run_preset(kPresets[state.range(0)]);
  rc.train.batch_size = 8;
  experiment::DeskData desk;
  desk.canvas = rc.model.input_size;
  desk.classes = rc.model.seg_channels;
  desk.train_slices = 40;
  const auto samples = data::generate_synthetic(experiment::split_spec(desk, "train"));
  RfHitModel model(rc.model, 1);
  train::Trainer trainer(model, rc.train, samples, 1 << 20);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step());
  state.SetLabel(kPresets[state.range(0)]);
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_SampleVolume(benchmark::State& state) {
  const ModelConfig c = preset("tiny");
  const RfHitModel model(c, 1);
  experiment::DeskData desk;
  desk.test_slices = 10;
  const auto samples = data::generate_synthetic(experiment::split_spec(desk, "test"));
  pipeline::SampleOptions opt;
  opt.euler_steps = state.range(0);
  for (auto _ : state) benchmark::DoNotOptimize(pipeline::predict(model, samples, opt));
  state.SetItemsProcessed(state.iterations() * static_cast<int64_t>(samples.size()));
}
BENCHMARK(BM_SampleVolume)->Arg(1)->Arg(3)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
