#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace voxrf {

inline int resolve_threads(int requested) {
  if (requested > 0) return requested;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Runs fn(begin, end, worker) over contiguous index chunks. Chunk boundaries
// depend only on n and the resolved thread count, so reductions that merge
// per-worker results in worker order are reproducible for a fixed thread
// count. worker indices are 0..chunks-1.
inline void parallel_chunks(
    std::size_t n, int threads,
    const std::function<void(std::size_t, std::size_t, int)>& fn) {
  if (n == 0) return;
  const int nthreads =
      std::min<std::size_t>(static_cast<std::size_t>(resolve_threads(threads)), n);
  if (nthreads <= 1) {
    fn(0, n, 0);
    return;
  }
  const std::size_t chunk = (n + nthreads - 1) / nthreads;
  std::vector<std::thread> pool;
  pool.reserve(nthreads);
  for (int w = 0; w < nthreads; ++w) {
    const std::size_t begin = static_cast<std::size_t>(w) * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&fn, begin, end, w] { fn(begin, end, w); });
  }
  for (auto& th : pool) th.join();
}

}  // namespace voxrf
