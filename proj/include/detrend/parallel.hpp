#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace detrend {

/// Worker count: DETREND_SDE_THREADS if set and positive, else hardware concurrency.
inline unsigned worker_count() {
  if (const char* env = std::getenv("DETREND_SDE_THREADS")) {
    try {
      const long n = std::stol(env);
      if (n > 0) return static_cast<unsigned>(n);
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs body(i) for i in [0, n). Each index writes only its own output slot,
/// so results do not depend on scheduling. If several indices throw, the
/// exception of the smallest index is rethrown.
template <class Body>
void parallel_for(std::size_t n, Body&& body) {
  const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(worker_count(), n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex err_mutex;
  std::size_t err_index = n;
  std::exception_ptr err;
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        body(i);
      } catch (...) {
        std::lock_guard lock(err_mutex);
        if (i < err_index) {
          err_index = i;
          err = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (unsigned w = 1; w < workers; ++w) pool.emplace_back(run);
  run();
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace detrend
