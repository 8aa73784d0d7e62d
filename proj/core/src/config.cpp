#include "rfhit/config.h"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace rfhit {
namespace {

using nlohmann::json;

int64_t line_of_offset(std::string_view text, size_t offset) {
  offset = std::min(offset, text.size());
  return 1 + std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n');
}

// Reads typed fields out of one JSON object section, recording the keys seen
// so leftovers can be reported as unknown.
class SectionReader {
 public:
  SectionReader(const json& obj, std::string section) : obj_(obj), section_(std::move(section)) {}

  template <typename T>
  void required(const char* key, T& out) {
    if (!obj_.contains(key)) {
      throw ConfigError("missing required field '" + section_ + "." + key + "'",
                        section_ + "." + key);
    }
    read(key, out);
  }

  template <typename T>
  void optional(const char* key, T& out) {
    if (obj_.contains(key)) read(key, out);
  }

  void extent(const char* key, Extent2& out, bool is_required) {
    if (!obj_.contains(key)) {
      if (is_required) {
        throw ConfigError("missing required field '" + section_ + "." + key + "'",
                          section_ + "." + key);
      }
      return;
    }
    std::vector<int64_t> pair;
    read(key, pair);
    if (pair.size() != 2) {
      throw ConfigError("field '" + section_ + "." + key + "' must be a [height, width] pair",
                        section_ + "." + key);
    }
    out = {pair[0], pair[1]};
  }

  void mark(const char* key) { seen_.insert(key); }

  void warn_unknown(std::vector<std::string>& warnings) const {
    for (const auto& [k, _] : obj_.items()) {
      if (!seen_.contains(k)) warnings.push_back("unknown key '" + section_ + "." + k + "' ignored");
    }
  }

 private:
  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    try {
      out = obj_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("field '" + section_ + "." + key + "' has the wrong type: " + e.what(),
                        section_ + "." + key);
    }
  }

  const json& obj_;
  std::string section_;
  std::set<std::string> seen_;
};

json section_object(const json& root, const char* name, bool is_required) {
  if (!root.contains(name)) {
    if (is_required) throw ConfigError(std::string("missing required section '") + name + "'", name);
    return json::object();
  }
  const json& s = root.at(name);
  if (!s.is_object()) throw ConfigError(std::string("section '") + name + "' must be an object", name);
  return s;
}

}  // namespace

std::string_view to_string(FusionMode mode) {
  return mode == FusionMode::kLerp ? "lerp" : "add";
}

Extent2 ModelConfig::level_grid(int64_t level) const {
  const int64_t f = int64_t{1} << level;
  return {input_size.height / (patch_size.height * f), input_size.width / (patch_size.width * f)};
}

int64_t ModelConfig::head_dim(int64_t level) const {
  const auto l = static_cast<size_t>(level);
  return widths.at(l) / num_heads_per_level.at(l);
}

std::vector<std::string> validate(const ModelConfig& c) {
  std::vector<std::string> v;
  const size_t levels = c.depths.size();
  if (levels == 0) v.push_back("depths must list at least one level");
  if (c.widths.size() != levels) {
    v.push_back("widths has " + std::to_string(c.widths.size()) + " entries but depths has " +
                std::to_string(levels));
  }
  if (levels > 0 && c.neighborhood_kernels.size() != levels - 1) {
    v.push_back("neighborhood_kernels needs " + std::to_string(levels - 1) + " entries, got " +
                std::to_string(c.neighborhood_kernels.size()));
  }
  if (c.num_heads_per_level.size() != levels) {
    v.push_back("num_heads_per_level needs " + std::to_string(levels) + " entries, got " +
                std::to_string(c.num_heads_per_level.size()));
  }
  for (size_t i = 0; i < c.depths.size(); ++i) {
    if (c.depths[i] < 1) v.push_back("depths[" + std::to_string(i) + "] must be >= 1");
  }
  for (size_t i = 0; i < c.neighborhood_kernels.size(); ++i) {
    const int64_t k = c.neighborhood_kernels[i];
    const std::string tag = "neighborhood_kernels[" + std::to_string(i) + "] = " + std::to_string(k);
    if (k % 2 == 0) v.push_back(tag + ": kernel must be odd");
    if (k < 3) v.push_back(tag + ": kernel must be >= 3");
  }
  for (size_t i = 0; i < c.widths.size(); ++i) {
    const std::string tag = "widths[" + std::to_string(i) + "] = " + std::to_string(c.widths[i]);
    if (c.widths[i] < 1) {
      v.push_back(tag + ": width must be positive");
      continue;
    }
    if (i >= c.num_heads_per_level.size()) continue;
    const int64_t heads = c.num_heads_per_level[i];
    if (heads < 1) {
      v.push_back("num_heads_per_level[" + std::to_string(i) + "] must be positive");
    } else if (c.widths[i] % heads != 0) {
      v.push_back(tag + ": width not divisible by head count " + std::to_string(heads));
    } else if (c.use_rope && (c.widths[i] / heads) % 4 != 0) {
      v.push_back(tag + ": head dim " + std::to_string(c.widths[i] / heads) +
                  " must be divisible by 4 for axial rotary embedding");
    }
  }
  if (c.patch_size.height < 1 || c.patch_size.width < 1) {
    v.push_back("patch_size must be positive");
  } else if (levels > 0) {
    const int64_t fy = c.patch_size.height << (levels - 1);
    const int64_t fx = c.patch_size.width << (levels - 1);
    if (c.input_size.height < 1 || c.input_size.width < 1 || c.input_size.height % fy != 0 ||
        c.input_size.width % fx != 0) {
      std::string factor = fy == fx ? std::to_string(fy) : std::to_string(fy) + "x" + std::to_string(fx);
      v.push_back("input_size " + std::to_string(c.input_size.height) + "x" +
                  std::to_string(c.input_size.width) + " not divisible by " + factor +
                  " (patch_size x 2^(levels-1))");
    }
  }
  if (c.mapping_depth < 0) v.push_back("mapping_depth must be >= 0");
  if (c.mapping_width < 2 || c.mapping_width % 2 != 0) {
    v.push_back("mapping_width must be a positive even number");
  }
  if (c.mapping_hidden < 1) v.push_back("mapping_hidden must be positive");
  if (c.seg_channels < 1) v.push_back("seg_channels must be positive");
  if (c.image_channels < 1) v.push_back("image_channels must be positive");
  if (c.ffn_expansion < 1) v.push_back("ffn_expansion must be positive");
  return v;
}

std::vector<std::string> validate(const TrainConfig& c) {
  std::vector<std::string> v;
  if (!(c.learning_rate > 0.0)) v.push_back("learning_rate must be > 0");
  if (c.weight_decay < 0.0) v.push_back("weight_decay must be >= 0");
  if (c.batch_size < 1) v.push_back("batch_size must be >= 1");
  if (c.epochs < 0) v.push_back("epochs must be >= 0");
  if (c.steps < 0) v.push_back("steps must be >= 0");
  if (!(c.warmup_fraction >= 0.0 && c.warmup_fraction < 1.0)) {
    v.push_back("warmup_fraction must lie in [0, 1)");
  }
  return v;
}

std::vector<std::string> validate(const InferConfig& c) {
  std::vector<std::string> v;
  if (c.euler_steps < 1) v.push_back("euler_steps must be >= 1");
  if (c.grid.count < 2) v.push_back("threshold grid count must be >= 2");
  if (!(c.grid.lo > 0.0 && c.grid.lo < c.grid.hi && c.grid.hi < 1.0)) {
    v.push_back("threshold grid must satisfy 0 < lo < hi < 1");
  }
  return v;
}

ModelConfig preset(std::string_view name) {
  ModelConfig c;
  if (name == "paper") {
    c.patch_size = {4, 4};
    c.depths = {2, 2, 2};
    c.widths = {128, 256, 384};
    c.neighborhood_kernels = {9, 13};
    c.mapping_depth = 1;
    c.mapping_width = 256;
    c.mapping_hidden = 784;
    c.num_heads_per_level = {2, 4, 6};
    c.seg_channels = 4;
    c.image_channels = 1;
    c.input_size = {224, 224};
  } else if (name == "tiny") {
    // Patch 4 would squeeze 80 inputs into 32 channels and lose the noise.
    c.patch_size = {2, 2};
    c.depths = {1, 1, 1};
    c.widths = {32, 64, 96};
    c.neighborhood_kernels = {5, 7};
    c.mapping_depth = 1;
    c.mapping_width = 64;
    c.mapping_hidden = 128;
    c.num_heads_per_level = {1, 2, 3};
    c.seg_channels = 4;
    c.image_channels = 1;
    c.input_size = {64, 64};
  } else if (name == "unit") {
    // Smallest grid that keeps a non-trivial (2x2) global-attention level.
    c.patch_size = {2, 2};
    c.depths = {1, 1, 1};
    c.widths = {8, 12, 16};
    c.neighborhood_kernels = {3, 3};
    c.mapping_depth = 1;
    c.mapping_width = 8;
    c.mapping_hidden = 12;
    c.num_heads_per_level = {1, 1, 2};
    c.seg_channels = 2;
    c.image_channels = 1;
    c.input_size = {16, 16};
  } else {
    throw std::invalid_argument("unknown preset '" + std::string(name) +
                                "' (expected paper, tiny or unit)");
  }
  return c;
}

RunConfig run_preset(std::string_view name) {
  RunConfig rc;
  rc.model = preset(name);
  if (name == "tiny") {
    // Desk-scale recipe: a few thousand steps instead of 1000 epochs.
    rc.train.learning_rate = 1e-3;
    rc.train.batch_size = 8;
    rc.train.steps = 3000;
    rc.train.augment = AugmentToggles::none();
    rc.train.augment.flips = true;
  } else if (name == "unit") {
    rc.train.batch_size = 2;
    rc.train.steps = 10;
    rc.train.grad_clip = 0.0;
    rc.train.augment = AugmentToggles::none();
  }
  return rc;
}

std::vector<std::string> preset_names() { return {"paper", "tiny", "unit"}; }

ConfigError::ConfigError(const std::string& message, std::string field, int64_t line)
    : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message : message),
      field_(std::move(field)),
      line_(line) {}

LoadedConfig parse_config(std::string_view text) {
  json root;
  try {
    root = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("parse error: ") + e.what(), {},
                      line_of_offset(text, e.byte > 0 ? e.byte - 1 : 0));
  }
  if (!root.is_object()) throw ConfigError("top level must be an object");

  LoadedConfig out;
  RunConfig& rc = out.config;

  json model = section_object(root, "model", true);
  SectionReader m(model, "model");
  m.extent("patch_size", rc.model.patch_size, true);
  m.required("depths", rc.model.depths);
  m.required("widths", rc.model.widths);
  m.required("neighborhood_kernels", rc.model.neighborhood_kernels);
  m.required("mapping_depth", rc.model.mapping_depth);
  m.required("mapping_width", rc.model.mapping_width);
  m.required("mapping_hidden", rc.model.mapping_hidden);
  m.required("num_heads_per_level", rc.model.num_heads_per_level);
  m.required("seg_channels", rc.model.seg_channels);
  m.required("image_channels", rc.model.image_channels);
  m.extent("input_size", rc.model.input_size, true);
  m.optional("ffn_expansion", rc.model.ffn_expansion);
  m.optional("hfe_enabled", rc.model.hfe_enabled);
  std::string fusion = std::string(to_string(rc.model.fusion));
  m.optional("fusion", fusion);
  if (fusion == "lerp") {
    rc.model.fusion = FusionMode::kLerp;
  } else if (fusion == "add") {
    rc.model.fusion = FusionMode::kAdd;
  } else {
    throw ConfigError("field 'model.fusion' must be \"lerp\" or \"add\"", "model.fusion");
  }
  m.optional("fuse_bottleneck", rc.model.fuse_bottleneck);
  m.optional("use_rope", rc.model.use_rope);
  m.warn_unknown(out.warnings);

  json train = section_object(root, "train", false);
  SectionReader t(train, "train");
  t.optional("learning_rate", rc.train.learning_rate);
  t.optional("weight_decay", rc.train.weight_decay);
  t.optional("batch_size", rc.train.batch_size);
  t.optional("epochs", rc.train.epochs);
  t.optional("steps", rc.train.steps);
  t.optional("warmup_fraction", rc.train.warmup_fraction);
  t.optional("seed", rc.train.seed);
  t.optional("grad_clip", rc.train.grad_clip);
  if (train.contains("augment")) {
    const json aug = section_object(train, "augment", true);
    SectionReader a(aug, "train.augment");
    a.optional("flips", rc.train.augment.flips);
    a.optional("rotate_scale", rc.train.augment.rotate_scale);
    a.optional("intensity", rc.train.augment.intensity);
    a.optional("gamma", rc.train.augment.gamma);
    a.optional("noise", rc.train.augment.noise);
    a.warn_unknown(out.warnings);
    t.mark("augment");
  }
  t.warn_unknown(out.warnings);

  json infer = section_object(root, "infer", false);
  SectionReader i(infer, "infer");
  i.optional("euler_steps", rc.infer.euler_steps);
  i.optional("thresholds", rc.infer.thresholds);
  if (infer.contains("threshold_grid")) {
    const json grid = section_object(infer, "threshold_grid", true);
    SectionReader g(grid, "infer.threshold_grid");
    g.required("count", rc.infer.grid.count);
    g.required("lo", rc.infer.grid.lo);
    g.required("hi", rc.infer.grid.hi);
    g.warn_unknown(out.warnings);
    i.mark("threshold_grid");
  }
  i.warn_unknown(out.warnings);

  for (const auto& [k, _] : root.items()) {
    if (k != "model" && k != "train" && k != "infer") {
      out.warnings.push_back("unknown section '" + k + "' ignored");
    }
  }
  return out;
}

LoadedConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what(), e.field());
  }
}

std::string config_to_text(const RunConfig& rc) {
  const ModelConfig& m = rc.model;
  json model = {
      {"patch_size", {m.patch_size.height, m.patch_size.width}},
      {"depths", m.depths},
      {"widths", m.widths},
      {"neighborhood_kernels", m.neighborhood_kernels},
      {"mapping_depth", m.mapping_depth},
      {"mapping_width", m.mapping_width},
      {"mapping_hidden", m.mapping_hidden},
      {"num_heads_per_level", m.num_heads_per_level},
      {"seg_channels", m.seg_channels},
      {"image_channels", m.image_channels},
      {"input_size", {m.input_size.height, m.input_size.width}},
      {"ffn_expansion", m.ffn_expansion},
      {"hfe_enabled", m.hfe_enabled},
      {"fusion", std::string(to_string(m.fusion))},
      {"fuse_bottleneck", m.fuse_bottleneck},
      {"use_rope", m.use_rope},
  };
  const TrainConfig& t = rc.train;
  json train = {
      {"learning_rate", t.learning_rate},
      {"weight_decay", t.weight_decay},
      {"batch_size", t.batch_size},
      {"epochs", t.epochs},
      {"steps", t.steps},
      {"warmup_fraction", t.warmup_fraction},
      {"seed", t.seed},
      {"grad_clip", t.grad_clip},
      {"augment",
       {{"flips", t.augment.flips},
        {"rotate_scale", t.augment.rotate_scale},
        {"intensity", t.augment.intensity},
        {"gamma", t.augment.gamma},
        {"noise", t.augment.noise}}},
  };
  json infer = {
      {"euler_steps", rc.infer.euler_steps},
      {"thresholds", rc.infer.thresholds},
      {"threshold_grid",
       {{"count", rc.infer.grid.count}, {"lo", rc.infer.grid.lo}, {"hi", rc.infer.grid.hi}}},
  };
  json root = {{"model", model}, {"train", train}, {"infer", infer}};
  return root.dump(2) + "\n";
}

void save_config(const RunConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write config file " + path.string());
  out << config_to_text(config);
  if (!out) throw ConfigError("write failed for " + path.string());
}

}  // namespace rfhit
