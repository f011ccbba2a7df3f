#pragma once

#include <cstdint>
#include <functional>

namespace hummorph {

// Global worker count for parallel_for. 0 = hardware concurrency.
void set_num_threads(int n);
int num_threads();

// Static partition of [0, n) over the worker pool. Each index is processed by
// exactly one worker, so kernels that write disjoint outputs produce
// bit-identical results for any thread count.
void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& range_fn,
                  int64_t grain = 1024);

}  // namespace hummorph
