#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace sddf {

/// Persistent worker pool for data-parallel maps over index ranges.
///
/// Work is split into one contiguous block per worker (static partition), so
/// for a fixed worker count the assignment of items to workers -- and hence
/// any per-worker floating-point accumulation order -- is reproducible.
class ThreadPool {
 public:
  explicit ThreadPool(int workers) : stop_(false) {
    workers = std::max(1, workers);
    for (int w = 1; w < workers; ++w) {
      threads_.emplace_back([this, w] { worker_loop(w); });
    }
    n_workers_ = workers;
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lk(mutex_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  int workers() const { return n_workers_; }

  /// Runs fn(begin, end, worker) on worker-private contiguous ranges covering
  /// [0, n). Blocks until all ranges complete. Worker 0 is the calling thread.
  void parallel_for(int n,
                    const std::function<void(int, int, int)>& fn) {
    if (n <= 0) return;
    int chunk = (n + n_workers_ - 1) / n_workers_;
    {
      std::lock_guard<std::mutex> lk(mutex_);
      job_ = &fn;
      job_n_ = n;
      job_chunk_ = chunk;
      pending_ = static_cast<int>(threads_.size());
      ++generation_;
    }
    cv_.notify_all();
    run_range(fn, n, chunk, 0);
    std::unique_lock<std::mutex> lk(mutex_);
    done_cv_.wait(lk, [this] { return pending_ == 0; });
    job_ = nullptr;
  }

  /// Pool sized from SDDF_THREADS (falling back to hardware concurrency).
  static ThreadPool& global() {
    static ThreadPool pool(env_workers());
    return pool;
  }

  static int env_workers() {
    if (const char* s = std::getenv("SDDF_THREADS")) {
      int n = std::atoi(s);
      if (n > 0) return n;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : static_cast<int>(hc);
  }

 private:
  static void run_range(const std::function<void(int, int, int)>& fn, int n,
                        int chunk, int worker) {
    int begin = worker * chunk;
    int end = std::min(n, begin + chunk);
    if (begin < end) fn(begin, end, worker);
  }

  void worker_loop(int worker) {
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(int, int, int)>* job = nullptr;
      int n = 0, chunk = 0;
      {
        std::unique_lock<std::mutex> lk(mutex_);
        cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        job = job_;
        n = job_n_;
        chunk = job_chunk_;
      }
      if (job) run_range(*job, n, chunk, worker);
      {
        std::lock_guard<std::mutex> lk(mutex_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> threads_;
  int n_workers_ = 1;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  bool stop_;
  const std::function<void(int, int, int)>* job_ = nullptr;
  int job_n_ = 0;
  int job_chunk_ = 0;
  int pending_ = 0;
  std::uint64_t generation_ = 0;
};

}  // namespace sddf
