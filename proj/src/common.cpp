// Copyright (c) 2026 The dinat-ir authors
// SPDX-License-Identifier: Apache-2.0

#include "dinat/common.hpp"

#include <atomic>
#include <condition_variable>
#include <iostream>
#include <mutex>
#include <thread>
#include <unordered_set>
#include <vector>

namespace dinat {

namespace {

std::atomic<int> g_threads{1};

// Persistent pool with static slicing. Each worker owns a fixed slice of
// [0, n) per job and the caller takes slice 0, so chunk boundaries depend
// only on (n, slice count) and every output element is written by exactly
// one thread.
class Pool {
 public:
  explicit Pool(int workers) : workers_(workers) {
    for (int i = 0; i < workers_; ++i) {
      threads_.emplace_back([this, i] { worker(i); });
    }
  }

  ~Pool() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  int workers() const { return workers_; }

  void run(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
    const int slices = workers_ + 1;
    {
      std::lock_guard<std::mutex> lk(mu_);
      body_ = &body;
      n_ = n;
      remaining_ = workers_;
      ++epoch_;
      cv_.notify_all();
    }
    slice(n, 0, slices, body);  // caller participates
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [this] { return remaining_ == 0; });
    body_ = nullptr;
  }

  static void slice(int64_t n, int index, int slices,
                    const std::function<void(int64_t, int64_t)>& body) {
    int64_t lo = n * index / slices;
    int64_t hi = n * (index + 1) / slices;
    if (lo < hi) body(lo, hi);
  }

 private:
  void worker(int index) {
    uint64_t seen = 0;
    while (true) {
      const std::function<void(int64_t, int64_t)>* body = nullptr;
      int64_t n = 0;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || epoch_ != seen; });
        if (stop_) return;
        seen = epoch_;
        body = body_;
        n = n_;
      }
      slice(n, index + 1, workers_ + 1, *body);
      {
        std::lock_guard<std::mutex> lk(mu_);
        --remaining_;
        done_cv_.notify_all();
      }
    }
  }

  const int workers_;
  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  const std::function<void(int64_t, int64_t)>* body_ = nullptr;
  int64_t n_ = 0;
  int remaining_ = 0;
  uint64_t epoch_ = 0;
  bool stop_ = false;
};

std::mutex g_pool_mu;
Pool* g_pool = nullptr;

Pool* pool_for(int workers) {
  std::lock_guard<std::mutex> lk(g_pool_mu);
  if (g_pool && g_pool->workers() != workers) {
    delete g_pool;
    g_pool = nullptr;
  }
  if (!g_pool) g_pool = new Pool(workers);
  return g_pool;
}

}  // namespace

void set_num_threads(int n) {
  if (n < 1) n = 1;
  g_threads.store(n);
}

int num_threads() { return g_threads.load(); }

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& body) {
  if (n <= 0) return;
  int t = g_threads.load();
  if (t <= 1 || n == 1) {
    body(0, n);
    return;
  }
  pool_for(t - 1)->run(n, body);
}

void warn_once(const std::string& key, const std::string& message) {
  static std::mutex mu;
  static std::unordered_set<std::string> seen;
  std::lock_guard<std::mutex> lk(mu);
  if (seen.insert(key).second) {
    std::cerr << "[warn] " << message << "\n";
  }
}

}  // namespace dinat
