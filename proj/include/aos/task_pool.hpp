#pragma once

#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace aos {

/// Persistent worker pool for data-parallel loops whose results must not
/// depend on scheduling. Callers hand out lane indices; any reduction the
/// caller performs afterwards runs in a fixed order, so outputs stay
/// byte-identical for every lane count.
///
/// Lane count comes from AOS_THREADS when set (clamped to [1, 32]), else
/// the hardware concurrency.
class TaskPool {
 public:
  static TaskPool& instance() {
    static TaskPool pool{lanes_from_env()};
    return pool;
  }

  int lanes() const { return n_lanes_; }

  /// Runs f(lane) on every lane; the calling thread takes lane 0. Blocks
  /// until all lanes finish. Not reentrant.
  template <class F>
  void run(const F& f) {
    if (n_lanes_ == 1) {
      f(0);
      return;
    }
    {
      std::lock_guard<std::mutex> lk{mutex_};
      invoke_ = [](const void* c, int lane) { (*static_cast<const F*>(c))(lane); };
      ctx_ = &f;
      ++generation_;
      pending_ = n_lanes_ - 1;
    }
    start_.notify_all();
    f(0);
    std::unique_lock<std::mutex> lk{mutex_};
    done_.wait(lk, [this] { return pending_ == 0; });
  }

  ~TaskPool() {
    {
      std::lock_guard<std::mutex> lk{mutex_};
      stop_ = true;
    }
    start_.notify_all();
    for (std::thread& t : workers_) t.join();
  }

  TaskPool(const TaskPool&) = delete;
  TaskPool& operator=(const TaskPool&) = delete;

 private:
  explicit TaskPool(int lanes) : n_lanes_(lanes) {
    workers_.reserve(n_lanes_ - 1);
    for (int lane = 1; lane < n_lanes_; ++lane)
      workers_.emplace_back([this, lane] { worker_loop(lane); });
  }

  static int lanes_from_env() {
    int lanes = static_cast<int>(std::thread::hardware_concurrency());
    if (const char* env = std::getenv("AOS_THREADS")) {
      try {
        lanes = std::stoi(env);
      } catch (...) {
        lanes = 1;
      }
    }
    return std::max(1, std::min(lanes, 32));
  }

  void worker_loop(int lane) {
    long long seen = 0;
    for (;;) {
      void (*invoke)(const void*, int) = nullptr;
      const void* ctx = nullptr;
      {
        std::unique_lock<std::mutex> lk{mutex_};
        start_.wait(lk, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        invoke = invoke_;
        ctx = ctx_;
      }
      invoke(ctx, lane);
      {
        std::lock_guard<std::mutex> lk{mutex_};
        if (--pending_ == 0) done_.notify_one();
      }
    }
  }

  const int n_lanes_;
  std::vector<std::thread> workers_;
  std::mutex mutex_;
  std::condition_variable start_, done_;
  void (*invoke_)(const void*, int) = nullptr;
  const void* ctx_ = nullptr;
  long long generation_ = 0;
  int pending_ = 0;
  bool stop_ = false;
};

}  // namespace aos
