#include "ncmatch/parallel.h"

#include <algorithm>
#include <exception>
#include <thread>
#include <vector>

namespace ncmatch {

void parallel_for(std::size_t n, int threads,
                  const std::function<void(std::size_t, std::size_t)>& run_range) {
  if (n == 0) return;
  const std::size_t workers =
      std::min<std::size_t>(std::max(threads, 1), n);
  if (workers <= 1) {
    run_range(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&run_range, &errors, w, begin, end] {
      try {
        run_range(begin, end);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  // Rethrow the lowest-chunk failure so the surfaced error does not depend
  // on thread scheduling.
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

int default_thread_count() {
  const unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

}  // namespace ncmatch
