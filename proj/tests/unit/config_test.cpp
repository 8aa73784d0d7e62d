#include "rfhit/config.h"

#include <algorithm>
#include <filesystem>

#include <gtest/gtest.h>

namespace rfhit {
namespace {

bool mentions(const std::vector<std::string>& v, const std::string& needle) {
  return std::any_of(v.begin(), v.end(), [&](const std::string& s) { return s.find(needle) != std::string::npos; });
}

TEST(Config, FullPresetValues) {
  const ModelConfig c = preset("paper");
  EXPECT_TRUE(validate(c).empty());
  EXPECT_EQ(c.patch_size, (Extent2{4, 4}));
  EXPECT_EQ(c.depths, (std::vector<int64_t>{2, 2, 2}));
  EXPECT_EQ(c.widths, (std::vector<int64_t>{128, 256, 384}));
  EXPECT_EQ(c.neighborhood_kernels, (std::vector<int64_t>{9, 13}));
  EXPECT_EQ(c.mapping_depth, 1);
  EXPECT_EQ(c.mapping_width, 256);
  EXPECT_EQ(c.mapping_hidden, 784);
  EXPECT_EQ(c.input_size, (Extent2{224, 224}));
  EXPECT_EQ(c.num_heads_per_level, (std::vector<int64_t>{2, 4, 6}));
}

TEST(Config, FullPresetLevelGrids) {
  const ModelConfig c = preset("paper");
  EXPECT_EQ(c.level_grid(0), (Extent2{56, 56}));
  EXPECT_EQ(c.level_grid(1), (Extent2{28, 28}));
  EXPECT_EQ(c.level_grid(2), (Extent2{14, 14}));
  EXPECT_EQ(c.head_dim(0), 64);
}

TEST(Config, EveryPresetValidates) {
  for (const auto& name : preset_names()) {
    EXPECT_TRUE(validate(preset(name)).empty()) << name;
    const RunConfig rc = run_preset(name);
    EXPECT_TRUE(validate(rc.train).empty()) << name;
    EXPECT_TRUE(validate(rc.infer).empty()) << name;
  }
}

TEST(Config, TinyPresetShape) {
  const ModelConfig c = preset("tiny");
  EXPECT_EQ(c.input_size, (Extent2{64, 64}));
  EXPECT_EQ(c.widths, (std::vector<int64_t>{32, 64, 96}));
  EXPECT_EQ(c.depths, (std::vector<int64_t>{1, 1, 1}));
  EXPECT_EQ(c.neighborhood_kernels, (std::vector<int64_t>{5, 7}));
}

TEST(Config, UnknownPresetThrows) { EXPECT_THROW(preset("huge"), std::invalid_argument); }

TEST(Config, EvenKernelIsAViolation) {
  ModelConfig c = preset("paper");
  c.neighborhood_kernels = {8, 13};
  EXPECT_TRUE(mentions(validate(c), "kernel must be odd"));
}

TEST(Config, IndivisibleInputIsAViolation) {
  ModelConfig c = preset("paper");
  c.input_size = {220, 220};
  EXPECT_TRUE(mentions(validate(c), "not divisible by 16"));
}

TEST(Config, ReportsAllViolationsAtOnce) {
  ModelConfig c = preset("paper");
  c.widths = {128, 256};
  c.neighborhood_kernels = {1};
  c.num_heads_per_level = {3, 4, 6};
  const auto v = validate(c);
  EXPECT_TRUE(mentions(v, "widths has 2 entries"));
  EXPECT_TRUE(mentions(v, "kernel must be >= 3"));
  EXPECT_TRUE(mentions(v, "not divisible by head count"));
}

TEST(Config, RopeNeedsHeadDimDivisibleByFour) {
  ModelConfig c = preset("unit");
  c.widths = {6, 12, 16};
  c.num_heads_per_level = {1, 1, 2};
  EXPECT_TRUE(mentions(validate(c), "divisible by 4"));
  c.use_rope = false;
  EXPECT_TRUE(validate(c).empty());
}

TEST(Config, TrainAndInferInvariants) {
  TrainConfig t;
  t.learning_rate = 0;
  t.warmup_fraction = 1.0;
  EXPECT_EQ(validate(t).size(), 2u);
  InferConfig i;
  i.grid = {1, 0.8, 0.2};
  EXPECT_EQ(validate(i).size(), 2u);
}

TEST(Config, TextRoundTripIsIdentity) {
  for (const auto& name : preset_names()) {
    RunConfig rc = run_preset(name);
    rc.infer.thresholds = {0.25, 0.5, 0.61, 0.7};
    rc.train.seed = 1234567890123ULL;
    rc.model.fusion = FusionMode::kAdd;
    const LoadedConfig back = parse_config(config_to_text(rc));
    EXPECT_TRUE(back.warnings.empty());
    EXPECT_EQ(back.config, rc) << name;
  }
}

TEST(Config, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "rfhit_config_test.json";
  const RunConfig rc = run_preset("paper");
  save_config(rc, path);
  EXPECT_EQ(load_config(path).config, rc);
  std::filesystem::remove(path);
}

TEST(Config, MissingFieldIsNamed) {
  const std::string text = R"({"model": {"patch_size": [4, 4], "depths": [2, 2, 2],
    "neighborhood_kernels": [9, 13], "num_heads_per_level": [2, 4, 6],
    "input_size": [224, 224]}})";
  try {
    parse_config(text);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "model.widths");
    EXPECT_NE(std::string(e.what()).find("widths"), std::string::npos);
  }
}

TEST(Config, ParseErrorCarriesLine) {
  try {
    parse_config("{\n  \"model\": {\n    \"depths\": [1,\n  }\n}");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_GE(e.line(), 3);
  }
}

TEST(Config, UnknownKeysWarn) {
  std::string text = config_to_text(run_preset("unit"));
  text.insert(text.find('{') + 1, "\"extra_section\": {\"x\": 1},");
  const auto pos = text.find("\"model\": {") + std::string("\"model\": {").size();
  text.insert(pos, "\"future_knob\": 3,");
  const LoadedConfig lc = parse_config(text);
  EXPECT_EQ(lc.config, run_preset("unit"));
  EXPECT_TRUE(mentions(lc.warnings, "future_knob"));
  EXPECT_TRUE(mentions(lc.warnings, "extra_section"));
}

TEST(Config, WrongTypeNamesField) {
  std::string text = config_to_text(run_preset("unit"));
  const auto pos = text.find("\"mapping_depth\"");
  const auto colon = text.find(':', pos);
  const auto comma = text.find_first_of(",\n}", colon);
  text.replace(colon + 1, comma - colon - 1, " \"one\"");
  try {
    parse_config(text);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "model.mapping_depth");
  }
}

}  // namespace
}  // namespace rfhit
