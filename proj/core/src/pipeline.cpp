#include "rfhit/pipeline.h"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "rfhit/flow.h"
#include "rfhit/raster.h"

namespace rfhit::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string value_file(const std::string& volume, int64_t slice, int64_t c) {
  return data::slice_stem(volume, slice) + "_c" + std::to_string(c) + ".pfm";
}

}  // namespace

Tensor initial_noise(uint64_t seed, const std::string& volume_id, int64_t slice_index, int64_t classes,
                     Extent2 size) {
  Rng rng = Rng::derive(seed, {fnv1a(volume_id), static_cast<uint64_t>(slice_index)});
  return rng.normal_tensor({1, size.height, size.width, classes});
}

std::vector<metrics::SlicePrediction> predict(const RfHitModel& model,
                                              std::span<const data::SliceSample> samples,
                                              const SampleOptions& options) {
  if (options.batch < 1) throw std::invalid_argument("predict: batch must be >= 1");
  const ModelConfig& cfg = model.config();
  ag::NoGradGuard no_grad;
  std::vector<metrics::SlicePrediction> out;
  for (size_t begin = 0; begin < samples.size(); begin += static_cast<size_t>(options.batch)) {
    const size_t end = std::min(samples.size(), begin + static_cast<size_t>(options.batch));
    std::vector<const data::SliceSample*> ptrs;
    Tensor x0({static_cast<int64_t>(end - begin), cfg.input_size.height, cfg.input_size.width, cfg.seg_channels});
    const int64_t per = x0.numel() / x0.batch();
    for (size_t i = begin; i < end; ++i) {
      const auto& s = samples[i];
      if (s.image.height() != cfg.input_size.height || s.image.width() != cfg.input_size.width ||
          s.image.channels() != cfg.image_channels) {
        throw std::invalid_argument("slice " + data::slice_stem(s.volume_id, s.slice_index) + ": image shape " +
                                    shape_string(s.image.shape()) + " does not match the model input");
      }
      ptrs.push_back(&s);
      const Tensor n = initial_noise(options.seed, s.volume_id, s.slice_index, cfg.seg_channels, cfg.input_size);
      std::copy_n(n.data(), per, x0.data() + static_cast<int64_t>(i - begin) * per);
    }
    const ag::Var image(data::stack_images(ptrs));
    const hourglass::LevelFeatures features = model.encode(image);
    const flow::VelocityField v = [&](const Tensor& x, double t) {
      const std::vector<double> ts(static_cast<size_t>(x.batch()), t);
      return model.velocity(ag::Var(x), ts, image, features).value();
    };
    const Tensor x1 = flow::euler_sample(v, std::move(x0), options.euler_steps);
    for (size_t i = begin; i < end; ++i) {
      Tensor values({1, cfg.input_size.height, cfg.input_size.width, cfg.seg_channels});
      std::copy_n(x1.data() + static_cast<int64_t>(i - begin) * per, per, values.data());
      out.push_back({samples[i].volume_id, samples[i].slice_index, std::move(values)});
    }
  }
  return out;
}

std::vector<metrics::SegVolume> assemble(std::span<const metrics::SlicePrediction> slices,
                                         std::span<const data::VolumeInfo> volumes,
                                         const metrics::Spacing& spacing) {
  std::set<std::string> known;
  for (const auto& v : volumes) known.insert(v.id);
  for (const auto& s : slices) {
    if (!known.count(s.volume_id)) throw std::invalid_argument("prediction for unknown volume " + s.volume_id);
  }
  std::vector<metrics::SegVolume> out;
  for (const auto& v : volumes) out.push_back(metrics::stack_slices(slices, v, spacing));
  return out;
}

std::vector<metrics::LabelVolume> ground_truth(std::span<const data::SliceSample> samples,
                                               const metrics::Spacing& spacing) {
  std::vector<metrics::LabelVolume> out;
  for (const auto& v : data::volumes_of(samples)) out.push_back(metrics::stack_labels(samples, v, spacing));
  return out;
}

metrics::Spacing spacing_of(std::span<const double> values) {
  if (values.size() != 3) throw std::invalid_argument("spacing needs 3 values");
  return {values[0], values[1], values[2]};
}

void write_predictions(const fs::path& root, std::span<const metrics::SlicePrediction> slices,
                       const metrics::Spacing& spacing) {
  fs::create_directories(root / "values");
  std::map<std::string, std::vector<int64_t>> volumes;
  std::vector<std::string> order;
  int64_t classes = 0;
  for (const auto& s : slices) {
    const Tensor& t = s.values;
    classes = t.channels();
    if (!volumes.count(s.volume_id)) order.push_back(s.volume_id);
    volumes[s.volume_id].push_back(s.slice_index);
    for (int64_t c = 0; c < classes; ++c) {
      raster::FloatImage img{t.height(), t.width(), {}};
      img.pixels.resize(static_cast<size_t>(t.height() * t.width()));
      for (int64_t i = 0; i < t.height() * t.width(); ++i) img.pixels[static_cast<size_t>(i)] = static_cast<float>(t[i * classes + c]);
      raster::write_pfm(root / "values" / value_file(s.volume_id, s.slice_index, c), img);
    }
  }
  json m = {{"classes", classes}, {"spacing", spacing}, {"volumes", json::array()}};
  for (const auto& id : order) m["volumes"].push_back({{"id", id}, {"slices", volumes[id]}});
  std::ofstream(root / "manifest.json") << m.dump(2) << '\n';
}

PredictionFolder read_predictions(const fs::path& root) {
  const fs::path manifest = root / "manifest.json";
  std::ifstream in(manifest);
  if (!in) throw std::runtime_error("cannot read " + manifest.string());
  PredictionFolder f;
  try {
    const json m = json::parse(in);
    f.classes = m.at("classes").get<int64_t>();
    f.spacing = spacing_of(m.at("spacing").get<std::vector<double>>());
    for (const auto& v : m.at("volumes")) f.volumes.push_back({v.at("id").get<std::string>(), v.at("slices").get<std::vector<int64_t>>()});
  } catch (const json::exception& e) {
    throw std::runtime_error(manifest.string() + ": " + e.what());
  }
  for (const auto& v : f.volumes) {
    for (int64_t idx : v.slices) {
      metrics::SlicePrediction p{v.id, idx, {}};
      for (int64_t c = 0; c < f.classes; ++c) {
        const raster::FloatImage img = raster::read_pfm(root / "values" / value_file(v.id, idx, c));
        if (p.values.empty()) p.values = Tensor({1, img.height, img.width, f.classes});
        if (img.height != p.values.height() || img.width != p.values.width()) {
          throw std::runtime_error(value_file(v.id, idx, c) + ": size differs from other classes");
        }
        for (int64_t i = 0; i < img.height * img.width; ++i) p.values[i * f.classes + c] = img.pixels[static_cast<size_t>(i)];
      }
      f.slices.push_back(std::move(p));
    }
  }
  return f;
}

void write_thresholds(const fs::path& path, std::span<const double> thresholds, const metrics::ThresholdGrid& grid) {
  const json j = {{"thresholds", std::vector<double>(thresholds.begin(), thresholds.end())},
                  {"grid", {{"count", grid.count}, {"lo", grid.lo}, {"hi", grid.hi}}}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::vector<double> read_thresholds(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    return json::parse(in).at("thresholds").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

}  // namespace rfhit::pipeline
