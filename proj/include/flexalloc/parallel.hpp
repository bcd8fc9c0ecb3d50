#pragma once

// Optional thread-pool-free parallel loop.  Serial by default so results
// are reproducible on any machine; FLEXALLOC_WORKERS=k opts into k threads.
// Each index writes its own output slot, so parallel runs stay bit-identical
// to serial ones.

#include <cstdlib>
#include <exception>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace flexalloc {

inline int env_worker_count() {
  const char* v = std::getenv("FLEXALLOC_WORKERS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long k = std::strtol(v, &end, 10);
  if (*end != '\0' || k < 1)
    throw std::runtime_error(
        "FLEXALLOC_WORKERS must be a positive integer, got '" +
        std::string(v) + "'");
  const unsigned hw = std::thread::hardware_concurrency();
  return static_cast<int>(std::min<long>(k, hw ? hw : 1));
}

/// Runs fn(i) for i in [0, count).  Static block partition; the first
/// exception thrown by any worker is rethrown on the caller's thread.
template <typename Fn>
void parallel_for(std::int64_t count, int workers, Fn&& fn) {
  if (count <= 0) return;
  if (workers <= 1 || count == 1) {
    for (std::int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const int nw = static_cast<int>(std::min<std::int64_t>(workers, count));
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(nw);
  const std::int64_t chunk = (count + nw - 1) / nw;
  for (int w = 0; w < nw; ++w) {
    const std::int64_t a = w * chunk, b = std::min(count, a + chunk);
    pool.emplace_back([&, w, a, b] {
      try {
        for (std::int64_t i = a; i < b; ++i) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace flexalloc
