#pragma once

#include <cstddef>
#include <functional>

namespace ncmatch {

// Splits [0, n) into one contiguous chunk per worker and runs
// run_range(begin, end) on each. Every index is handled by exactly one
// worker, so per-index outputs are bit-identical for any worker count.
void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t, std::size_t)>& run_range);

int default_thread_count();

}  // namespace ncmatch
