#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string>

#include "rfhit/tensor.h"

namespace rfhit {

/// Seeded generator with platform-independent derived distributions.
///
/// std::mt19937_64 is fully specified by the standard, but the std
/// distributions are not; the conversions here are fixed so that streams
/// reproduce across standard libraries.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  /// Independent stream keyed by a seed and any number of integer ids.
  static Rng derive(uint64_t seed, std::initializer_list<uint64_t> keys);

  uint64_t next_u64() { return engine_(); }
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer on [0, n).
  uint64_t below(uint64_t n);
  bool coin() { return (next_u64() >> 63) != 0; }
  double normal();

  Tensor normal_tensor(Shape shape);

  std::string state() const;
  void restore(const std::string& state);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace rfhit
