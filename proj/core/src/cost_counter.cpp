#include "rfhit/cost_counter.h"

namespace rfhit {
namespace {
thread_local CostCounter* tls_counter = nullptr;
}

CostCounter* active_cost_counter() { return tls_counter; }

ScopedCostCounter::ScopedCostCounter(CostCounter& counter) : previous_(tls_counter) {
  tls_counter = &counter;
}

ScopedCostCounter::~ScopedCostCounter() { tls_counter = previous_; }

}  // namespace rfhit
