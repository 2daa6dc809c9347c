#pragma once

#include <tbb/blocked_range.h>
#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include <cstddef>
#include <utility>

namespace forcelens {

// Worker count from FORCELENS_THREADS, or 0 (TBB default) when unset/invalid.
int env_thread_count();

// Runs fn inside a task arena limited to `threads` workers (0 = default).
template <typename Fn>
decltype(auto) with_threads(int threads, Fn&& fn) {
  if (threads <= 0) return std::forward<Fn>(fn)();
  tbb::task_arena arena(threads);
  return arena.execute(std::forward<Fn>(fn));
}

// Calls body(i) for i in [0, n). Each index must write only its own outputs,
// which keeps results independent of scheduling.
template <typename Body>
void parallel_for_each(std::size_t n, Body&& body) {
  constexpr std::size_t kGrain = 64;
  if (n <= kGrain) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  tbb::parallel_for(tbb::blocked_range<std::size_t>(0, n, kGrain),
                    [&](const tbb::blocked_range<std::size_t>& r) {
                      for (std::size_t i = r.begin(); i != r.end(); ++i) body(i);
                    });
}

}  // namespace forcelens
