#pragma once

// Minimal fork-join helper. Work is split into contiguous index ranges; every
// caller writes disjoint outputs so results do not depend on the thread count.

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <thread>
#include <vector>

namespace pixrel {

inline std::atomic<int>& max_threads_setting() {
  static std::atomic<int> n{1};
  return n;
}

inline void set_max_threads(int n) { max_threads_setting() = std::max(1, n); }
inline int max_threads() { return max_threads_setting().load(); }

// Calls fn(begin, end) over a partition of [0, n).
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  const auto workers =
      static_cast<std::size_t>(std::min<std::size_t>(static_cast<std::size_t>(max_threads()), n));
  if (workers <= 1) {
    if (n > 0) fn(std::size_t{0}, n);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t b = w * chunk;
    const std::size_t e = std::min(n, b + chunk);
    if (b < e) pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
}

}  // namespace pixrel
