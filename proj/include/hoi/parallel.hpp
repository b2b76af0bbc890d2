#pragma once

#include <atomic>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace hoi {

// Worker cap: hardware concurrency, optionally capped by HOI_NUM_THREADS.
inline std::size_t worker_count(std::size_t n_jobs) {
  std::size_t hw = std::thread::hardware_concurrency();
  if (hw == 0) hw = 1;
  if (const char* env = std::getenv("HOI_NUM_THREADS")) {
    char* end = nullptr;
    unsigned long cap = std::strtoul(env, &end, 10);
    if (end != env && cap >= 1 && hw > cap) hw = cap;
  }
  if (n_jobs < 1) n_jobs = 1;
  return hw < n_jobs ? hw : n_jobs;
}

// Runs fn(i) for i in [0, n).  Each index is handled exactly once; callers
// write results into index-addressed slots so aggregation order never
// depends on the schedule.  The first exception wins and is rethrown after
// all workers join.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn) {
  std::size_t workers = worker_count(n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex err_mu;
  auto body = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= n) break;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(body);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace hoi
