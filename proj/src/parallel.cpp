#include "redraw/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

namespace redraw::par {

namespace {
int g_threads = 1;
thread_local bool t_in_worker = false;
}  // namespace

void set_threads(int n) { g_threads = std::max(1, n); }

int threads() { return g_threads; }

void parallel_for(int64_t begin, int64_t end,
                  const std::function<void(int64_t, int64_t)>& fn) {
  int64_t n = end - begin;
  if (n <= 0) return;
  int workers = t_in_worker ? 1 : std::min<int64_t>(g_threads, n);
  if (workers <= 1) {
    fn(begin, end);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers - 1);
  std::exception_ptr error;
  std::atomic<bool> failed{false};
  auto run_chunk = [&](int w) {
    t_in_worker = true;
    int64_t lo = begin + n * w / workers;
    int64_t hi = begin + n * (w + 1) / workers;
    try {
      if (lo < hi) fn(lo, hi);
    } catch (...) {
      if (!failed.exchange(true)) error = std::current_exception();
    }
    t_in_worker = false;
  };
  for (int w = 1; w < workers; ++w) pool.emplace_back(run_chunk, w);
  run_chunk(0);
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

}  // namespace redraw::par
