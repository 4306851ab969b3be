#pragma once

#include <functional>

namespace motionflow {

// Worker count: MOTIONFLOW_THREADS if set (>=1), otherwise the hardware
// concurrency. Results never depend on the count; work is only ever split at
// independent-output granularity.
int thread_budget();

// Runs fn(0..n-1), possibly on multiple threads. Nested calls run serially.
void parallel_for(int n, const std::function<void(int)>& fn);

}  // namespace motionflow
