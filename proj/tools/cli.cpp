#include "cli.h"

#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <set>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "rfhit/accounting.h"
#include "rfhit/checkpoint.h"
#include "rfhit/experiment.h"
#include "rfhit/pipeline.h"
#include "rfhit/trainer.h"

namespace rfhit::cli {
namespace {

namespace fs = std::filesystem;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path default_out_dir() {
  if (const char* env = std::getenv("RFHIT_OUT_DIR"); env && *env) return env;
  return "rfhit-out";
}

// ---- shared options -----------------------------------------------------

struct ConfigSource {
  std::string preset;
  std::string config_path;

  void add(CLI::App& app) {
    app.add_option("--preset", preset, "named preset: paper, tiny or unit");
    app.add_option("--config", config_path, "JSON config file");
  }
  RunConfig load(std::ostream& err) const {
    if (!preset.empty() && !config_path.empty()) throw UsageError("give either --preset or --config, not both");
    if (!config_path.empty()) {
      LoadedConfig lc = load_config(config_path);
      for (const auto& w : lc.warnings) err << "warning: " << config_path << ": " << w << '\n';
      return lc.config;
    }
    return run_preset(preset.empty() ? "tiny" : preset);
  }
};

struct DataSource {
  std::string data = "synthetic";
  std::string split;
  uint64_t data_seed = 0;
  double noise = 0.08;
  int64_t train_slices = 500;
  int64_t val_slices = 100;
  int64_t test_slices = 100;

  void add(CLI::App& app, const std::string& default_split) {
    split = default_split;
    app.add_option("--data", data, "'synthetic' or a slice folder")->capture_default_str();
    app.add_option("--split", split, "synthetic split: train, val or test")->capture_default_str();
    app.add_option("--data-seed", data_seed, "synthetic data seed")->capture_default_str();
    app.add_option("--noise", noise, "synthetic noise level")->capture_default_str();
    app.add_option("--train-slices", train_slices, "synthetic training slices")->capture_default_str();
    app.add_option("--val-slices", val_slices, "synthetic validation slices")->capture_default_str();
    app.add_option("--test-slices", test_slices, "synthetic test slices")->capture_default_str();
  }

  experiment::DeskData desk(const ModelConfig& m) const {
    experiment::DeskData d;
    d.canvas = m.input_size;
    d.classes = m.seg_channels;
    d.seed = data_seed;
    d.noise = noise;
    d.train_slices = train_slices;
    d.val_slices = val_slices;
    d.test_slices = test_slices;
    return d;
  }

  data::SliceFolder load(const ModelConfig& m, bool require_labels = true) const {
    if (data == "synthetic") {
      if (m.image_channels != 1) throw UsageError("synthetic data has one image channel; config has C_I = " + std::to_string(m.image_channels));
      data::SliceFolder f;
      f.samples = data::generate_synthetic(experiment::split_spec(desk(m), split));
      f.volumes = data::volumes_of(f.samples);
      return f;
    }
    data::IngestOptions opt;
    opt.image_channels = m.image_channels;
    opt.classes = m.seg_channels;
    opt.size = m.input_size;
    opt.require_labels = require_labels;
    return data::ingest_slice_folder(data, opt);
  }
};

void require_nonempty(const data::SliceFolder& f, const std::string& what) {
  if (f.samples.empty()) throw std::runtime_error(what + ": no slices found");
}

// ---- commands -----------------------------------------------------------

struct TrainCmd {
  ConfigSource config;
  DataSource data;
  int64_t steps = 0;
  std::optional<uint64_t> seed;
  std::optional<double> lr;
  std::optional<int64_t> batch;
  std::string out;
  std::string resume;
  int64_t log_every = 50;
  int64_t save_every = 0;
  int64_t until = 0;

  void add(CLI::App& app) {
    config.add(app);
    data.add(app, "train");
    app.add_option("--steps", steps, "optimizer steps (overrides epochs)");
    app.add_option("--seed", seed, "training seed");
    app.add_option("--lr", lr, "base learning rate");
    app.add_option("--batch", batch, "batch size");
    app.add_option("--out", out, "output directory (default $RFHIT_OUT_DIR or ./rfhit-out)");
    app.add_option("--resume", resume, "checkpoint to continue from");
    app.add_option("--log-every", log_every, "print every k steps")->capture_default_str();
    app.add_option("--save-every", save_every, "checkpoint every k steps (0: only at the end)");
    app.add_option("--until", until, "stop after this step, keeping the full schedule (for staged runs)");
  }

  int operator()(std::ostream& o, std::ostream& err) const {
    RunConfig rc;
    if (!resume.empty()) {
      rc = ckpt::read_header(resume).config;
      if (!config.preset.empty() || !config.config_path.empty()) {
        const RunConfig given = config.load(err);
        if (!(given.model == rc.model)) throw UsageError("--resume: checkpoint model config differs from the given config");
      }
    } else {
      rc = config.load(err);
    }
    if (seed) rc.train.seed = *seed;
    if (lr) rc.train.learning_rate = *lr;
    if (batch) rc.train.batch_size = *batch;
    if (steps > 0) rc.train.steps = steps;
    for (const auto& v : validate(rc.model)) throw UsageError("config: " + v);
    for (const auto& v : validate(rc.train)) throw UsageError("config: " + v);

    const data::SliceFolder train = data.load(rc.model);
    require_nonempty(train, "training data");
    const int64_t total = rc.train.steps > 0 ? rc.train.steps
                                             : train::steps_for_epochs(rc.train.epochs, static_cast<int64_t>(train.samples.size()),
                                                                       rc.train.batch_size);
    const fs::path dir = out.empty() ? default_out_dir() : fs::path(out);
    fs::create_directories(dir);
    RfHitModel model(rc.model, rc.train.seed);
    train::Trainer trainer(model, rc.train, train.samples, total);
    if (!resume.empty()) {
      trainer.resume(resume);
      o << fmt::format("resumed from {} at step {}\n", resume, trainer.steps_done());
    }
    save_config(rc, dir / "config.json");
    const train::StepLog log(dir / "train_log.jsonl");
    const fs::path ckpt_path = dir / "checkpoint.rfhit";
    const int64_t stop = until > 0 ? std::min(until, total) : total;
    o << fmt::format("training {} steps on {} slices ({} params)\n", total, train.samples.size(),
                     model.parameters().total_size());
    trainer.run(stop, [&](const train::StepRecord& r) {
      log.append(r);
      if (log_every > 0 && (r.step % log_every == 0 || r.step == stop)) {
        o << fmt::format("step {:>6}  lr {:.3e}  loss {:.6f}  {:.1f}s\n", r.step, r.lr, r.loss, r.wall_seconds) << std::flush;
      }
      if (save_every > 0 && r.step % save_every == 0) trainer.save(ckpt_path, rc);
    });
    trainer.save(ckpt_path, rc);
    o << "checkpoint: " << ckpt_path.string() << '\n';
    return 0;
  }
};

struct SampleCmd {
  std::string checkpoint;
  DataSource data;
  std::optional<int64_t> euler_steps;
  uint64_t seed = 0;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    data.add(app, "test");
    app.add_option("--euler-steps,-N", euler_steps, "Euler steps (default from config, 3)");
    app.add_option("--seed", seed, "sampling seed")->capture_default_str();
    app.add_option("--out", out, "prediction folder (default <out dir>/predictions)");
  }

  int operator()(std::ostream& o, std::ostream&) const {
    ckpt::Header h;
    const RfHitModel model = ckpt::load_model(checkpoint, &h);
    const data::SliceFolder f = data.load(model.config(), /*require_labels=*/false);
    require_nonempty(f, "sample data");
    pipeline::SampleOptions opt;
    opt.euler_steps = euler_steps.value_or(h.config.infer.euler_steps);
    opt.seed = seed;
    const auto pred = pipeline::predict(model, f.samples, opt);
    const fs::path dir = out.empty() ? default_out_dir() / "predictions" : fs::path(out);
    pipeline::write_predictions(dir, pred, pipeline::spacing_of(f.spacing));
    o << fmt::format("sampled {} slices in {} volumes with N = {}; wrote {}\n", pred.size(), f.volumes.size(),
                     opt.euler_steps, dir.string());
    return 0;
  }
};

struct CalibrateCmd {
  std::string checkpoint;
  DataSource data;
  std::optional<int64_t> euler_steps;
  uint64_t seed = 0;
  std::string out;

  void add(CLI::App& app) {
    app.add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
    data.add(app, "val");
    app.add_option("--euler-steps,-N", euler_steps, "Euler steps (default from config, 3)");
    app.add_option("--seed", seed, "sampling seed")->capture_default_str();
    app.add_option("--out", out, "thresholds file (default <out dir>/thresholds.json)");
  }

  int operator()(std::ostream& o, std::ostream&) const {
    ckpt::Header h;
    const RfHitModel model = ckpt::load_model(checkpoint, &h);
    const data::SliceFolder f = data.load(model.config());
    if (f.samples.empty()) throw std::runtime_error("calibration needs at least one validation volume");
    pipeline::SampleOptions opt;
    opt.euler_steps = euler_steps.value_or(h.config.infer.euler_steps);
    opt.seed = seed;
    const auto spacing = pipeline::spacing_of(f.spacing);
    const auto pred = pipeline::assemble(pipeline::predict(model, f.samples, opt), f.volumes, spacing);
    const auto truth = pipeline::ground_truth(f.samples, spacing);
    const auto grid = metrics::ThresholdGrid::from(h.config.infer.grid);
    const auto taus = grid.values();
    const auto thresholds = metrics::calibrate_thresholds(pred, truth, grid);
    o << fmt::format("grid: {} values from {} to {} (step {:.6f})\n", taus.size(), taus.front(), taus.back(),
                     (grid.hi - grid.lo) / static_cast<double>(grid.count - 1));
    for (size_t c = 0; c < thresholds.size(); ++c) {
      const auto curve = metrics::dice_curve(pred, truth, static_cast<int32_t>(c), grid);
      o << fmt::format("class {}: threshold {:.6f}  validation Dice {:.4f}\n", c, thresholds[c],
                       *std::max_element(curve.begin(), curve.end()));
    }
    const fs::path path = out.empty() ? default_out_dir() / "thresholds.json" : fs::path(out);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    pipeline::write_thresholds(path, thresholds, grid);
    o << "thresholds: " << path.string() << '\n';
    return 0;
  }
};

struct EvalCmd {
  std::string predictions;
  std::string thresholds;
  DataSource truth;
  int64_t classes = 0;
  bool json = false;

  void add(CLI::App& app) {
    app.add_option("--predictions", predictions, "prediction folder")->required();
    app.add_option("--thresholds", thresholds, "thresholds file")->required();
    truth.add(app, "test");
    app.add_option("--truth", truth.data, "ground truth: 'synthetic' or a slice folder");
    app.add_flag("--json", json, "also print per-volume scores as JSON");
  }

  int operator()(std::ostream& o, std::ostream&) const {
    const pipeline::PredictionFolder pf = pipeline::read_predictions(predictions);
    const auto taus = pipeline::read_thresholds(thresholds);
    if (pf.slices.empty()) throw std::runtime_error(predictions + ": no predicted slices");
    ModelConfig shape;
    shape.seg_channels = pf.classes;
    shape.image_channels = 1;
    shape.input_size = {pf.slices.front().values.height(), pf.slices.front().values.width()};
    const data::SliceFolder gt = truth.load(shape);
    std::set<std::string> truth_ids, pred_ids;
    for (const auto& v : gt.volumes) truth_ids.insert(v.id);
    for (const auto& v : pf.volumes) pred_ids.insert(v.id);
    for (const auto& id : truth_ids) {
      if (!pred_ids.count(id)) throw std::runtime_error("volume " + id + " missing from predictions");
    }
    for (const auto& id : pred_ids) {
      if (!truth_ids.count(id)) throw std::runtime_error("volume " + id + " has no ground truth");
    }
    const auto spacing = pipeline::spacing_of(gt.spacing);
    const auto pred = pipeline::assemble(pf.slices, gt.volumes, spacing);
    const auto summary = metrics::evaluate(pred, pipeline::ground_truth(gt.samples, spacing), taus);
    o << metrics::format_table(summary);
    if (json) {
      for (const auto& v : summary.volumes) {
        o << fmt::format("{{\"volume\": \"{}\", \"dice\": [", v.id);
        for (size_t i = 0; i < v.classes.size(); ++i) o << (i ? ", " : "") << fmt::format("{:.6f}", v.classes[i].dice);
        o << "], \"hd95\": [";
        for (size_t i = 0; i < v.classes.size(); ++i) {
          o << (i ? ", " : "") << (v.classes[i].hd95 ? fmt::format("{:.6f}", *v.classes[i].hd95) : "null");
        }
        o << "]}\n";
      }
    }
    return 0;
  }
};

struct AblateCmd {
  ConfigSource config;
  DataSource data;
  int64_t steps = 0;
  std::optional<uint64_t> seed;

  void add(CLI::App& app) {
    config.add(app);
    data.add(app, "train");
    app.add_option("--steps", steps, "optimizer steps per variant (default from config)");
    app.add_option("--seed", seed, "training seed shared by all variants");
  }

  int operator()(std::ostream& o, std::ostream& err) const {
    RunConfig base = config.load(err);
    if (seed) base.train.seed = *seed;
    if (steps > 0) base.train.steps = steps;
    if (data.data != "synthetic") throw UsageError("ablate runs on synthetic data only");
    const experiment::DeskSplits splits = experiment::make_splits(data.desk(base.model));
    const int64_t total = base.train.steps > 0 ? base.train.steps
                                               : train::steps_for_epochs(base.train.epochs,
                                                                         static_cast<int64_t>(splits.train.size()),
                                                                         base.train.batch_size);
    struct Variant {
      const char* name;
      bool hfe;
      FusionMode fusion;
    };
    const Variant variants[] = {{"w/o HFE", false, FusionMode::kLerp},
                                {"w/ HFE (lerp)", true, FusionMode::kLerp},
                                {"addition", true, FusionMode::kAdd}};
    std::map<std::string, metrics::EvalSummary> results;
    for (const auto& v : variants) {
      RunConfig rc = base;
      rc.model.hfe_enabled = v.hfe;
      rc.model.fusion = v.fusion;
      o << fmt::format("training variant '{}' for {} steps (data seed {}, train seed {})\n", v.name, total,
                       data.data_seed, rc.train.seed)
        << std::flush;
      results[v.name] = experiment::train_and_evaluate(rc, splits, total).summary;
    }

    const auto& names = results.begin()->second.class_names;
    auto header = [&](const char* title) {
      std::string s = fmt::format("\n{}\n{:<12}", title, "Variant");
      for (const auto& n : names) s += fmt::format("{:>9}", n);
      return s + fmt::format("{:>9}\n", "Avg.");
    };
    auto row = [&](const char* label, const metrics::EvalSummary& r) {
      std::string s = fmt::format("{:<12}", label);
      for (double d : r.mean_dice) s += fmt::format("{:>9.2f}", 100 * d);
      return s + fmt::format("{:>9.2f}\n", 100 * r.avg_dice);
    };
    const auto& without = results.at("w/o HFE");
    const auto& with = results.at("w/ HFE (lerp)");
    const auto& add = results.at("addition");
    o << header("Ablation: hierarchical feature encoder (test Dice %, desk scale)");
    o << row("w/o HFE", without) << row("w/ HFE", with);
    o << "  reference, full scale (ACDC mean Dice): w/o HFE 90.69, w/ HFE 91.27\n";
    o << header("Ablation: fusion rule (test Dice %, desk scale)");
    o << row("addition", add) << row("lerp", with);
    o << "  reference, full scale (ACDC mean Dice): addition 91.09, lerp 91.27\n";
    o << fmt::format("\ndirection at desk scale: HFE {:+.2f} (reference +0.58), lerp vs addition {:+.2f} (reference +0.18)\n",
                     100 * (with.avg_dice - without.avg_dice), 100 * (with.avg_dice - add.avg_dice));
    o << "variants share the data seed and the training seed; the w/ HFE row and the lerp row are one run.\n";
    return 0;
  }
};

struct ReportCmd {
  ConfigSource config;
  std::optional<int64_t> euler_steps;
  bool json = false;

  void add(CLI::App& app) {
    config.add(app);
    app.add_option("--euler-steps,-N", euler_steps, "steps for the trajectory figure (default from config, 3)");
    app.add_flag("--json", json, "machine-readable output");
  }

  int operator()(std::ostream& o, std::ostream& err) const {
    const RunConfig rc = config.load(err);
    const auto report = accounting::analyze(rc.model, euler_steps.value_or(rc.infer.euler_steps));
    const accounting::Reference reference;
    const bool compare = config.preset == "paper";
    o << (json ? accounting::report_json(report, compare ? &reference : nullptr) + "\n"
               : accounting::format_report(report, compare ? &reference : nullptr));
    return 0;
  }
};

struct GenerateCmd {
  DataSource data;
  ConfigSource config;
  std::string out;

  void add(CLI::App& app) {
    config.add(app);
    app.add_option("--data-seed", data.data_seed, "synthetic data seed")->capture_default_str();
    app.add_option("--noise", data.noise, "noise level")->capture_default_str();
    app.add_option("--train-slices", data.train_slices)->capture_default_str();
    app.add_option("--val-slices", data.val_slices)->capture_default_str();
    app.add_option("--test-slices", data.test_slices)->capture_default_str();
    app.add_option("--out", out, "destination (train/, val/, test/ slice folders)")->required();
  }

  int operator()(std::ostream& o, std::ostream& err) const {
    const RunConfig rc = config.load(err);
    const auto desk = data.desk(rc.model);
    for (const char* split : {"train", "val", "test"}) {
      const auto samples = data::generate_synthetic(experiment::split_spec(desk, split));
      data::write_slice_folder(fs::path(out) / split, samples);
      o << fmt::format("{}: {} slices\n", (fs::path(out) / split).string(), samples.size());
    }
    return 0;
  }
};

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"rfhit: rectified-flow hierarchical transformer segmentation"};
  app.require_subcommand(1);
  TrainCmd train;
  SampleCmd sample;
  CalibrateCmd calibrate;
  EvalCmd eval;
  AblateCmd ablate;
  ReportCmd report;
  GenerateCmd generate;
  train.add(*app.add_subcommand("train", "train a model"));
  sample.add(*app.add_subcommand("sample", "Euler-sample predictions for a data set"));
  calibrate.add(*app.add_subcommand("calibrate", "grid-search per-class decode thresholds"));
  eval.add(*app.add_subcommand("eval", "score predictions against ground truth"));
  ablate.add(*app.add_subcommand("ablate", "train and compare the encoder and fusion variants"));
  report.add(*app.add_subcommand("report", "parameter and FLOP report"));
  generate.add(*app.add_subcommand("generate", "write synthetic slice folders"));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "train") return train(out, err);
    if (cmd == "sample") return sample(out, err);
    if (cmd == "calibrate") return calibrate(out, err);
    if (cmd == "eval") return eval(out, err);
    if (cmd == "ablate") return ablate(out, err);
    if (cmd == "report") return report(out, err);
    return generate(out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace rfhit::cli
