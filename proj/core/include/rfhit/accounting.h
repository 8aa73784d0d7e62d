#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rfhit/config.h"
#include "rfhit/cost_counter.h"
#include "rfhit/model.h"

namespace rfhit::accounting {

/// Counting convention stated in every report.
inline constexpr const char* kConvention =
    "1 MAC = 2 FLOPs; softmax and RMS-norm elements = 5 FLOPs each; "
    "elementwise activations, residual adds, lerps and rotary rotations not counted; batch 1";

/// One submodule, named like its parameter prefix (e.g. "hfm.enc", "hfe.proj").
struct Entry {
  std::string name;
  int64_t params = 0;
  CostCounter cost;  // one evaluation at batch 1
};

struct CostReport {
  Extent2 input;
  int64_t euler_steps = 3;
  std::vector<Entry> entries;

  int64_t params() const;
  int64_t params_with_prefix(const std::string& prefix) const;
  CostCounter cost_with_prefix(const std::string& prefix) const;
  int64_t flow_flops() const { return cost_with_prefix("hfm.").flops(); }
  int64_t encoder_flops() const { return cost_with_prefix("hfe.").flops(); }
  /// One velocity evaluation including the encoder pass.
  int64_t single_forward_flops() const { return flow_flops() + encoder_flops(); }
  /// N flow evaluations plus one shared encoder pass.
  int64_t trajectory_flops() const { return euler_steps * flow_flops() + encoder_flops(); }
};

/// Closed-form parameter and FLOP counts from the configuration alone.
CostReport analyze(const ModelConfig& config, int64_t euler_steps = 3);

/// Submodule of a parameter name: the first two dotted components with
/// trailing level digits dropped ("hfm.enc1.block0.ffn.up.weight" -> "hfm.enc").
std::string submodule_of(const std::string& parameter_name);

/// Parameter totals by submodule, enumerated from the store.
std::map<std::string, int64_t> enumerate_params(const nn::ParameterStore& store);

struct MeasuredCost {
  CostCounter encoder;
  CostCounter flow;
};
/// Runs one encoder pass and one velocity evaluation at batch 1 with an
/// active counter.
MeasuredCost measure(const RfHitModel& model);

/// Reference figures for the full-size preset.
struct Reference {
  double params = 13.6e6;
  double params_tolerance = 0.20;  // relative
  double gflops = 10.14;
  double gflops_factor = 2.0;
};

std::string format_report(const CostReport& report, const Reference* reference = nullptr);
/// Machine-readable totals (JSON).
std::string report_json(const CostReport& report, const Reference* reference = nullptr);

}  // namespace rfhit::accounting
