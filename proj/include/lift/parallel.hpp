#ifndef LIFT_PARALLEL_HPP
#define LIFT_PARALLEL_HPP

#include <algorithm>
#include <cstddef>
#include <thread>
#include <vector>

namespace lift {

/// Worker count used by parallel kernels. Defaults to hardware concurrency.
void set_num_threads(int n);
int num_threads();

/// Runs fn(begin, end) over disjoint chunks of [0, n). Chunks never share an
/// index, so callers writing only to slot `idx` need no synchronization.
template <typename Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t min_chunk = 512) {
  const std::size_t workers = std::min<std::size_t>(
      static_cast<std::size_t>(std::max(1, num_threads())),
      (n + min_chunk - 1) / std::max<std::size_t>(min_chunk, 1));
  if (workers <= 1) {
    if (n > 0) fn(std::size_t{0}, n);
    return;
  }
  const std::size_t chunk = (n + workers - 1) / workers;
  std::vector<std::jthread> pool;
  pool.reserve(workers - 1);
  for (std::size_t w = 1; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  fn(std::size_t{0}, std::min(n, chunk));
}

}  // namespace lift

#endif  // LIFT_PARALLEL_HPP
