#pragma once

#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace splatfit {

// Resolves the worker count: explicit request > SPLATFIT_THREADS env var > 1.
inline int resolve_threads(int requested = 0) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("SPLATFIT_THREADS")) {
    int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

// Runs fn(thread_index, begin, end) over a static contiguous partition of
// [0, count). Thread t always receives the same range for a given (count,
// threads) pair, so per-thread partial results merged in thread order are
// reproducible for a fixed thread count.
inline void parallel_ranges(int count, int threads,
                            const std::function<void(int, int, int)>& fn) {
  if (threads <= 1 || count <= 1) {
    fn(0, 0, count);
    return;
  }
  if (threads > count) threads = count;
  const int base = count / threads;
  const int extra = count % threads;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  int begin = 0;
  for (int t = 0; t < threads; ++t) {
    const int len = base + (t < extra ? 1 : 0);
    const int end = begin + len;
    pool.emplace_back(fn, t, begin, end);
    begin = end;
  }
  for (auto& th : pool) th.join();
}

}  // namespace splatfit
