#pragma once

#include <algorithm>
#include <cstdlib>
#include <functional>
#include <thread>
#include <vector>

namespace sciedkit {

// Worker-thread cap: SCIEDKIT_THREADS env var, else hardware concurrency.
inline int max_threads() {
  static const int cached = [] {
    if (const char* env = std::getenv("SCIEDKIT_THREADS")) {
      const int v = std::atoi(env);
      if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return cached;
}

namespace detail {
inline bool& parallel_enabled_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

// Disables nested parallel_for on the current thread while alive. Used by
// the experiment matrix, which parallelizes over cells instead.
class SerialSection {
 public:
  SerialSection() : prev_(detail::parallel_enabled_flag()) {
    detail::parallel_enabled_flag() = false;
  }
  ~SerialSection() { detail::parallel_enabled_flag() = prev_; }
  SerialSection(const SerialSection&) = delete;
  SerialSection& operator=(const SerialSection&) = delete;

 private:
  bool prev_;
};

// Runs fn(begin, end) over a fixed partition of [0, n). Each index is
// processed by exactly one invocation, so results do not depend on the
// thread count; output is byte-identical for any SCIEDKIT_THREADS.
inline void parallel_for(size_t n, size_t grain,
                         const std::function<void(size_t, size_t)>& fn) {
  if (n == 0) return;
  int threads = detail::parallel_enabled_flag() ? max_threads() : 1;
  if (grain < 1) grain = 1;
  threads = std::min<size_t>(threads, (n + grain - 1) / grain);
  if (threads <= 1) {
    fn(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads - 1);
  const size_t chunk = (n + threads - 1) / threads;
  for (int t = 1; t < threads; ++t) {
    const size_t b = std::min(n, chunk * static_cast<size_t>(t));
    const size_t e = std::min(n, b + chunk);
    if (b < e) pool.emplace_back([&fn, b, e] { fn(b, e); });
  }
  fn(0, std::min(n, chunk));
  for (auto& th : pool) th.join();
}

}  // namespace sciedkit
