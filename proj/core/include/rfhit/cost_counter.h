#pragma once

#include <cstdint>

namespace rfhit {

/// Execution tallies collected by instrumented kernels.
///
/// Convention: one multiply-accumulate counts as two FLOPs; each element
/// passing through a softmax or an RMS normalization counts as
/// kNormFlopsPerElement FLOPs. Elementwise activations, residual adds, lerps
/// and rotary rotations are not counted.
struct CostCounter {
  static constexpr int64_t kFlopsPerMac = 2;
  static constexpr int64_t kNormFlopsPerElement = 5;

  int64_t macs = 0;
  int64_t norm_elements = 0;
  int64_t softmax_elements = 0;
  /// Query-key score evaluations in attention, summed over batch and heads.
  int64_t key_comparisons = 0;

  int64_t flops() const {
    return kFlopsPerMac * macs + kNormFlopsPerElement * (norm_elements + softmax_elements);
  }
  void reset() { *this = CostCounter{}; }
};

/// Counter receiving tallies on this thread, or nullptr.
CostCounter* active_cost_counter();

/// Installs a counter for the current thread for the lifetime of the scope.
class ScopedCostCounter {
 public:
  explicit ScopedCostCounter(CostCounter& counter);
  ~ScopedCostCounter();
  ScopedCostCounter(const ScopedCostCounter&) = delete;
  ScopedCostCounter& operator=(const ScopedCostCounter&) = delete;

 private:
  CostCounter* previous_;
};

}  // namespace rfhit
