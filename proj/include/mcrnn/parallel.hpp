#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace mcrnn {

// Runs fn(i) for i in [0, n) on up to `workers` threads. Each index is handled
// by exactly one thread; callers write results into per-index slots and reduce
// them afterwards in index order, so the outcome does not depend on `workers`.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn&& fn) {
  const std::size_t w = std::min<std::size_t>(n, workers < 1 ? 1 : static_cast<std::size_t>(workers));
  if (w <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(w);
  {
    std::vector<std::jthread> pool;
    pool.reserve(w);
    for (std::size_t id = 0; id < w; ++id) {
      pool.emplace_back([&, id] {
        try {
          for (std::size_t i = id; i < n; i += w) fn(i);
        } catch (...) {
          errors[id] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace mcrnn
