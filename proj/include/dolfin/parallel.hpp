#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <thread>
#include <vector>

namespace dolfin {

/// Worker cap from DOLFIN_THREADS (default 1).
inline int worker_threads() {
  if (const char* env = std::getenv("DOLFIN_THREADS")) {
    const int n = std::atoi(env);
    if (n >= 1) return n;
  }
  return 1;
}

/// Splits [0, n) into at most `threads` contiguous chunks and runs
/// fn(chunk, begin, end) for each, concurrently when threads > 1. Chunk
/// boundaries depend only on (n, threads).
template <class Fn>
void parallel_chunks(int n, int threads, Fn&& fn) {
  const int chunks = std::max(1, std::min(threads, n));
  if (chunks == 1) {
    fn(0, 0, n);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(chunks));
  for (int c = 0; c < chunks; ++c) {
    const int begin = n * c / chunks;
    const int end = n * (c + 1) / chunks;
    pool.emplace_back([&fn, &errors, c, begin, end] {
      try {
        fn(c, begin, end);
      } catch (...) {
        errors[static_cast<std::size_t>(c)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  // Lowest chunk wins so the reported error does not depend on timing.
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace dolfin
