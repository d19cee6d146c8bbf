#include "volfit/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <string>

namespace volfit {

int resolve_thread_count(int requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("VOLFIT_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

WorkerPool::WorkerPool(int workers) {
  const int n = std::max(1, workers);
  errors_.resize(n);
  for (int i = 1; i < n; ++i) threads_.emplace_back([this, i] { worker_loop(i); });
}

WorkerPool::~WorkerPool() {
  {
    std::lock_guard lock(mutex_);
    stop_ = true;
  }
  start_cv_.notify_all();
  for (auto& t : threads_) t.join();
}

void WorkerPool::worker_loop(int index) {
  std::size_t seen = 0;
  for (;;) {
    const std::function<void(int)>* task = nullptr;
    {
      std::unique_lock lock(mutex_);
      start_cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
      if (stop_) return;
      seen = generation_;
      task = task_;
    }
    try {
      (*task)(index);
    } catch (...) {
      errors_[index] = std::current_exception();
    }
    {
      std::lock_guard lock(mutex_);
      if (--pending_ == 0) done_cv_.notify_one();
    }
  }
}

void WorkerPool::run(const std::function<void(int)>& fn) {
  std::fill(errors_.begin(), errors_.end(), nullptr);
  if (!threads_.empty()) {
    std::lock_guard lock(mutex_);
    task_ = &fn;
    pending_ = static_cast<int>(threads_.size());
    ++generation_;
  }
  start_cv_.notify_all();
  try {
    fn(0);
  } catch (...) {
    errors_[0] = std::current_exception();
  }
  if (!threads_.empty()) {
    std::unique_lock lock(mutex_);
    done_cv_.wait(lock, [&] { return pending_ == 0; });
    task_ = nullptr;
  }
  for (auto& e : errors_)
    if (e) std::rethrow_exception(e);
}

void WorkerPool::for_static(std::size_t n, const std::function<void(std::size_t, std::size_t, int)>& fn) {
  const std::size_t w = static_cast<std::size_t>(size());
  run([&](int worker) {
    const std::size_t begin = n * worker / w;
    const std::size_t end = n * (worker + 1) / w;
    if (begin < end) fn(begin, end, worker);
  });
}

void WorkerPool::for_dynamic(std::size_t n, std::size_t grain,
                             const std::function<void(std::size_t, std::size_t, int)>& fn) {
  grain = std::max<std::size_t>(1, grain);
  std::atomic<std::size_t> next{0};
  run([&](int worker) {
    for (;;) {
      const std::size_t begin = next.fetch_add(grain);
      if (begin >= n) return;
      fn(begin, std::min(n, begin + grain), worker);
    }
  });
}

}  // namespace volfit
