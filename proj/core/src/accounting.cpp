#include "rfhit/accounting.h"

#include <cctype>

#include <fmt/format.h>
#include <json.hpp>

#include "rfhit/attention.h"

namespace rfhit::accounting {
namespace {

struct Builder {
  std::map<std::string, Entry> entries;
  std::vector<std::string> order;

  Entry& at(const std::string& name) {
    auto [it, fresh] = entries.try_emplace(name);
    if (fresh) {
      it->second.name = name;
      order.push_back(name);
    }
    return it->second;
  }
  // Linear layer over `rows` tokens.
  void linear(const std::string& name, int64_t rows, int64_t in, int64_t out, bool bias = false) {
    Entry& e = at(name);
    e.params += in * out + (bias ? out : 0);
    e.cost.macs += rows * in * out;
  }
  void norm(const std::string& name, int64_t tokens, int64_t c, int64_t cond_width) {
    Entry& e = at(name);
    e.cost.norm_elements += tokens * c;
    if (cond_width > 0) {
      e.params += cond_width * c;
      e.cost.macs += cond_width * c;
    } else {
      e.params += c;
    }
  }
  void block(const std::string& name, Extent2 grid, int64_t c, int64_t heads, int64_t kernel, int64_t expansion,
             int64_t cond_width) {
    const int64_t t = grid.area();
    norm(name, t, c, cond_width);
    linear(name, t, c, 3 * c);
    Entry& e = at(name);
    const int64_t comparisons = heads * t * attention::window_size(grid.height, grid.width, kernel);
    e.cost.key_comparisons += comparisons;
    e.cost.softmax_elements += comparisons;
    e.cost.macs += 2 * comparisons * (c / heads);
    linear(name, t, c, c);
    norm(name, t, c, cond_width);
    linear(name, t, c, 2 * expansion * c);
    linear(name, t, expansion * c, c);
  }
  void scalar(const std::string& name) { at(name).params += 1; }
};

CostCounter& operator+=(CostCounter& a, const CostCounter& b) {
  a.macs += b.macs;
  a.norm_elements += b.norm_elements;
  a.softmax_elements += b.softmax_elements;
  a.key_comparisons += b.key_comparisons;
  return a;
}

}  // namespace

int64_t CostReport::params() const {
  int64_t n = 0;
  for (const auto& e : entries) n += e.params;
  return n;
}

int64_t CostReport::params_with_prefix(const std::string& prefix) const {
  int64_t n = 0;
  for (const auto& e : entries)
    if (e.name.starts_with(prefix)) n += e.params;
  return n;
}

CostCounter CostReport::cost_with_prefix(const std::string& prefix) const {
  CostCounter c;
  for (const auto& e : entries)
    if (e.name.starts_with(prefix)) c += e.cost;
  return c;
}

CostReport analyze(const ModelConfig& cfg, int64_t euler_steps) {
  const auto problems = validate(cfg);
  if (!problems.empty()) throw std::invalid_argument("analyze: invalid config: " + problems.front());
  Builder b;
  const int64_t levels = cfg.levels();
  const int64_t p2 = cfg.patch_size.area();
  const int64_t cw = cfg.mapping_width;
  auto width = [&](int64_t l) { return cfg.widths[static_cast<size_t>(l)]; };
  auto heads = [&](int64_t l) { return cfg.num_heads_per_level[static_cast<size_t>(l)]; };
  auto depth = [&](int64_t l) { return cfg.depths[static_cast<size_t>(l)]; };
  auto tokens = [&](int64_t l) { return cfg.level_grid(l).area(); };
  auto kernel = [&](int64_t l) {
    return l == levels - 1 ? attention::kGlobal : cfg.neighborhood_kernels[static_cast<size_t>(l)];
  };

  b.linear("hfm.patch_in", tokens(0), p2 * (cfg.seg_channels + cfg.image_channels), width(0));
  b.linear("hfm.mapping", 1, cw, cw);
  for (int64_t d = 0; d < cfg.mapping_depth; ++d) {
    b.norm("hfm.mapping", 1, cw, 0);
    b.linear("hfm.mapping", 1, cw, 2 * cfg.mapping_hidden);
    b.linear("hfm.mapping", 1, cfg.mapping_hidden, cw);
  }
  b.norm("hfm.mapping", 1, cw, 0);
  for (int64_t l = 0; l + 1 < levels; ++l) {
    for (int64_t i = 0; i < depth(l); ++i) {
      b.block("hfm.enc", cfg.level_grid(l), width(l), heads(l), kernel(l), cfg.ffn_expansion, cw);
    }
    b.linear("hfm.merge", tokens(l + 1), 4 * width(l), width(l + 1));
  }
  for (int64_t i = 0; i < depth(levels - 1); ++i) {
    b.block("hfm.mid", cfg.level_grid(levels - 1), width(levels - 1), heads(levels - 1), attention::kGlobal,
            cfg.ffn_expansion, cw);
  }
  for (int64_t l = levels - 2; l >= 0; --l) {
    b.linear("hfm.split", tokens(l + 1), width(l + 1), 4 * width(l));
    b.scalar("hfm.skip");
    for (int64_t i = 0; i < depth(l); ++i) {
      b.block("hfm.dec", cfg.level_grid(l), width(l), heads(l), kernel(l), cfg.ffn_expansion, cw);
    }
  }
  b.norm("hfm.out_norm", tokens(0), width(0), 0);
  b.linear("hfm.head", tokens(0), width(0), p2 * cfg.seg_channels, /*bias=*/true);

  if (cfg.hfe_enabled) {
    const int64_t fused = cfg.fuse_bottleneck ? levels : levels - 1;
    b.linear("hfe.patch_in", tokens(0), p2 * cfg.image_channels, width(0));
    for (int64_t l = 0; l < fused; ++l) {
      if (l > 0) b.linear("hfe.merge", tokens(l), 4 * width(l - 1), width(l));
      if (l + 1 < levels) {
        for (int64_t i = 0; i < depth(l); ++i) {
          b.block("hfe.enc", cfg.level_grid(l), width(l), heads(l), kernel(l), cfg.ffn_expansion, 0);
        }
      }
      b.linear("hfe.proj", tokens(l), width(l), width(l));
      if (cfg.fusion == FusionMode::kLerp) b.scalar("hfe.fuse");
    }
  }

  CostReport r;
  r.input = cfg.input_size;
  r.euler_steps = euler_steps;
  for (const auto& name : b.order) r.entries.push_back(b.entries.at(name));
  return r;
}

std::string submodule_of(const std::string& name) {
  const auto first = name.find('.');
  if (first == std::string::npos) return name;
  const auto second = name.find('.', first + 1);
  std::string head = name.substr(0, second);
  while (!head.empty() && std::isdigit(static_cast<unsigned char>(head.back()))) head.pop_back();
  return head;
}

std::map<std::string, int64_t> enumerate_params(const nn::ParameterStore& store) {
  std::map<std::string, int64_t> out;
  for (const auto& p : store.items()) out[submodule_of(p.name)] += p.size();
  return out;
}

MeasuredCost measure(const RfHitModel& model) {
  const ModelConfig& c = model.config();
  ag::NoGradGuard no_grad;
  const ag::Var image(Tensor({1, c.input_size.height, c.input_size.width, c.image_channels}));
  const ag::Var xt(Tensor({1, c.input_size.height, c.input_size.width, c.seg_channels}));
  const double t = 0.5;
  MeasuredCost m;
  hourglass::LevelFeatures features;
  {
    ScopedCostCounter scope(m.encoder);
    features = model.encode(image);
  }
  {
    ScopedCostCounter scope(m.flow);
    model.velocity(xt, std::span<const double>(&t, 1), image, features);
  }
  return m;
}

namespace {

bool params_ok(const CostReport& r, const Reference& ref) {
  return std::abs(static_cast<double>(r.params()) - ref.params) <= ref.params_tolerance * ref.params;
}

bool flops_ok(const CostReport& r, const Reference& ref) {
  const double g = static_cast<double>(r.single_forward_flops()) / 1e9;
  return g >= ref.gflops / ref.gflops_factor && g <= ref.gflops * ref.gflops_factor;
}

}  // namespace

std::string format_report(const CostReport& r, const Reference* ref) {
  std::string out = fmt::format("input {}x{}, Euler steps {}\nconvention: {}\n\n", r.input.height, r.input.width,
                                r.euler_steps, kConvention);
  out += fmt::format("{:<14}{:>14}{:>14}\n", "submodule", "params", "GFLOPs");
  for (const auto& e : r.entries) {
    out += fmt::format("{:<14}{:>14}{:>14.4f}\n", e.name, e.params, static_cast<double>(e.cost.flops()) / 1e9);
  }
  out += fmt::format("\n{:<28}{:>14}\n", "params, flow model", r.params_with_prefix("hfm."));
  out += fmt::format("{:<28}{:>14}\n", "params, encoder", r.params_with_prefix("hfe."));
  out += fmt::format("{:<28}{:>14} ({:.2f} M)\n", "params, total", r.params(), static_cast<double>(r.params()) / 1e6);
  out += fmt::format("{:<28}{:>14.4f}\n", "GFLOPs, flow model", static_cast<double>(r.flow_flops()) / 1e9);
  out += fmt::format("{:<28}{:>14.4f}\n", "GFLOPs, encoder", static_cast<double>(r.encoder_flops()) / 1e9);
  out += fmt::format("{:<28}{:>14.4f}\n", "GFLOPs, single forward", static_cast<double>(r.single_forward_flops()) / 1e9);
  out += fmt::format("{:<28}{:>14.4f}\n", fmt::format("GFLOPs, N={} trajectory", r.euler_steps),
                     static_cast<double>(r.trajectory_flops()) / 1e9);
  if (ref) {
    out += fmt::format("\nreference: {:.1f} M params (tolerance +/-{:.0f}%): {}\n", ref->params / 1e6,
                       100 * ref->params_tolerance, params_ok(r, *ref) ? "within" : "OUTSIDE");
    out += fmt::format("reference: {:.2f} GFLOPs (tolerance x{:.0f}, single forward): {}\n", ref->gflops,
                       ref->gflops_factor, flops_ok(r, *ref) ? "within" : "OUTSIDE");
  }
  return out;
}

std::string report_json(const CostReport& r, const Reference* ref) {
  nlohmann::json j = {{"input", {r.input.height, r.input.width}},
                      {"euler_steps", r.euler_steps},
                      {"convention", kConvention},
                      {"params", {{"total", r.params()}, {"hfm", r.params_with_prefix("hfm.")}, {"hfe", r.params_with_prefix("hfe.")}}},
                      {"flops", {{"hfm", r.flow_flops()}, {"hfe", r.encoder_flops()}, {"single_forward", r.single_forward_flops()},
                                 {"trajectory", r.trajectory_flops()}}}};
  nlohmann::json subs = nlohmann::json::object();
  for (const auto& e : r.entries) subs[e.name] = {{"params", e.params}, {"flops", e.cost.flops()}};
  j["submodules"] = subs;
  if (ref) {
    j["reference"] = {{"params", ref->params}, {"gflops", ref->gflops},
                      {"params_within_tolerance", params_ok(r, *ref)}, {"flops_within_tolerance", flops_ok(r, *ref)}};
  }
  return j.dump(2);
}

}  // namespace rfhit::accounting
