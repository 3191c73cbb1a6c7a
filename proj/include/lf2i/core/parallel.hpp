#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace lf2i {

/// Worker cap shared by all stages. 0 means hardware concurrency.
inline std::atomic<std::size_t>& worker_limit() {
  static std::atomic<std::size_t> limit{0};
  return limit;
}

inline std::size_t effective_workers() {
  std::size_t w = worker_limit().load();
  if (w == 0) w = std::max<std::size_t>(1, std::thread::hardware_concurrency());
  return w;
}

/// Calls f(i) for i in [0, n). Results must be written to per-index slots;
/// f must be safe to call concurrently for distinct i.
template <class F>
void parallel_for(std::size_t n, F&& f) {
  const std::size_t workers = std::min(effective_workers(), n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto body = [&] {
    for (;;) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      try {
        f(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next.store(n);
        return;
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  for (std::size_t t = 1; t < workers; ++t) pool.emplace_back(body);
  body();
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace lf2i
