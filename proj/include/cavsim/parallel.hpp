#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace cavsim {

/// Worker count used when a caller passes 0.
int default_threads();
void set_default_threads(int n);

/// Runs f(i) for i in [0, n) over a fixed pool. Work items are claimed in
/// contiguous static blocks, so any per-index output is independent of the
/// thread count. The first exception thrown by a worker is rethrown.
template <class F>
void parallel_for(std::size_t n, int threads, F&& f) {
  if (threads <= 0) threads = default_threads();
  const std::size_t nt = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  if (nt <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::exception_ptr err;
  std::mutex mu;
  std::vector<std::thread> pool;
  pool.reserve(nt);
  for (std::size_t t = 0; t < nt; ++t) {
    pool.emplace_back([&, t] {
      const std::size_t lo = n * t / nt, hi = n * (t + 1) / nt;
      try {
        for (std::size_t i = lo; i < hi; ++i) f(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

}  // namespace cavsim
