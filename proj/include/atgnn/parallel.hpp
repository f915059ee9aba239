#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace atgnn {

// Worker cap from ATGNN_THREADS; defaults to 1 (fully sequential). Read per
// call so tests can vary it.
inline int worker_count() {
  const char* env = std::getenv("ATGNN_THREADS");
  if (!env) return 1;
  const int v = std::atoi(env);
  if (v < 1) return 1;
  return v > 64 ? 64 : v;
}

// Runs fn(0..n-1) across up to worker_count() threads. Work items must not
// depend on each other; callers that reduce results must do so afterwards in
// index order so the outcome does not depend on the thread count.
inline void parallel_for(int n, const std::function<void(int)>& fn) {
  const int workers = std::min(worker_count(), n);
  if (workers <= 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto body = [&] {
    for (;;) {
      const int i = next.fetch_add(1);
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int t = 0; t < workers; ++t) pool.emplace_back(body);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace atgnn
