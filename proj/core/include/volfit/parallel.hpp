#pragma once

#include <condition_variable>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace volfit {

/// Resolves a requested worker count: >0 as given, otherwise VOLFIT_THREADS,
/// otherwise the hardware concurrency.
int resolve_thread_count(int requested);

/// Fixed-size pool of persistent workers. Worker 0 is the calling thread.
/// Worker indices are stable so callers can keep per-worker buffers and
/// reduce them in index order.
class WorkerPool {
 public:
  explicit WorkerPool(int workers = 1);
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  int size() const { return static_cast<int>(threads_.size()) + 1; }

  /// Calls fn(worker) once on every worker and waits. Rethrows the exception
  /// of the lowest-indexed failing worker.
  void run(const std::function<void(int)>& fn);

  /// Splits [0, n) into size() contiguous chunks; chunk w goes to worker w.
  void for_static(std::size_t n, const std::function<void(std::size_t, std::size_t, int)>& fn);

  /// Hands out [0, n) in blocks of `grain` to whichever worker is free.
  void for_dynamic(std::size_t n, std::size_t grain, const std::function<void(std::size_t, std::size_t, int)>& fn);

 private:
  void worker_loop(int index);

  std::vector<std::thread> threads_;
  std::mutex mutex_;
  std::condition_variable start_cv_;
  std::condition_variable done_cv_;
  const std::function<void(int)>* task_ = nullptr;
  std::size_t generation_ = 0;
  int pending_ = 0;
  bool stop_ = false;
  std::vector<std::exception_ptr> errors_;
};

}  // namespace volfit
