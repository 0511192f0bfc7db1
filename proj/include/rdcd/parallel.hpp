#pragma once

#include <cstddef>
#include <thread>
#include <vector>

namespace rdcd {

// Runs fn(i) for i in [0, n) split over contiguous chunks. Callers must only
// write to per-index slots; reductions happen after the join, in index order,
// so results do not depend on the thread count.
template <typename F>
void parallel_rows(std::size_t n, int threads, F&& fn) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), n);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    std::size_t lo = w * chunk;
    std::size_t hi = std::min(n, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn]() {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& t : pool) t.join();
}

}  // namespace rdcd
