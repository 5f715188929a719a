#pragma once

// Index-ordered parallel map over independent tasks. Results land in slot i
// regardless of completion order, so output is identical for any worker count.

#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

#include <tbb/blocked_range.h>
#include <tbb/global_control.h>
#include <tbb/parallel_for.h>

namespace nrsync {

inline std::size_t default_workers() {
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

template <class Result, class Task>
std::vector<Result> parallel_map(std::size_t count, Task&& task, std::size_t workers = 0) {
  std::vector<Result> out(count);
  if (workers == 0) workers = default_workers();
  if (workers == 1 || count < 2) {
    for (std::size_t i = 0; i < count; ++i) out[i] = task(i);
    return out;
  }
  tbb::global_control limit(tbb::global_control::max_allowed_parallelism, workers);
  tbb::parallel_for(tbb::blocked_range<std::size_t>(0, count, 1), [&](const tbb::blocked_range<std::size_t>& r) {
    for (std::size_t i = r.begin(); i != r.end(); ++i) out[i] = task(i);
  });
  return out;
}

}  // namespace nrsync
