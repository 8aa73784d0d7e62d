#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "rfhit/config.h"
#include "rfhit/model.h"
#include "rfhit/optimizer.h"

namespace rfhit::ckpt {

inline constexpr uint32_t kVersion = 1;

/// File layout, little-endian:
///   "RFHITCKP" | u32 version | u64 header bytes | JSON header |
///   per parameter: value, first moment, second moment (f64 each) |
///   u32 CRC-32 of everything before it.
/// The header holds the run config, step counters and the parameter table
/// (name, shape, role) in registration order.
class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kIo, kFormat, kVersion, kCorrupt, kMismatch };
  CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

struct Header {
  RunConfig config;
  int64_t step = 0;
  int64_t total_steps = 0;
  int64_t optimizer_steps = 0;
};

void save(const std::filesystem::path& path, const RunConfig& config, const RfHitModel& model,
          const optim::AdamW& optimizer, int64_t step, int64_t total_steps);

/// Reads and verifies the whole file, returning its header.
Header read_header(const std::filesystem::path& path);

/// Loads parameters (and moments when `optimizer` is given) into `model`.
/// The stored model config must equal model.config().
Header load(const std::filesystem::path& path, RfHitModel& model, optim::AdamW* optimizer = nullptr);

/// Builds the model described by the checkpoint and loads it.
RfHitModel load_model(const std::filesystem::path& path, Header* header = nullptr);

}  // namespace rfhit::ckpt
