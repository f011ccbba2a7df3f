#include "hummorph/threading.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace hummorph {

namespace {

std::atomic<int> g_num_threads{0};

class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  void run(int workers, int64_t n, int64_t chunk,
           const std::function<void(int64_t, int64_t)>& fn) {
    ensure(workers - 1);
    std::unique_lock lock(mu_);
    job_fn_ = &fn;
    job_n_ = n;
    job_chunk_ = chunk;
    job_workers_ = workers;
    pending_ = workers - 1;
    ++epoch_;
    cv_.notify_all();
    lock.unlock();

    work(0);

    lock.lock();
    done_cv_.wait(lock, [&] { return pending_ == 0; });
    job_fn_ = nullptr;
  }

 private:
  Pool() = default;
  ~Pool() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
      ++epoch_;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void ensure(int extra) {
    std::lock_guard lock(spawn_mu_);
    while ((int)threads_.size() < extra) {
      int id = (int)threads_.size() + 1;
      threads_.emplace_back([this, id] { loop(id); });
    }
  }

  void loop(int id) {
    uint64_t seen = 0;
    for (;;) {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return epoch_ != seen; });
      seen = epoch_;
      if (stop_) return;
      if (id >= job_workers_) {
        continue;
      }
      lock.unlock();
      work(id);
      lock.lock();
      if (--pending_ == 0) done_cv_.notify_one();
    }
  }

  void work(int id) {
    // Fixed blocks per worker: worker w owns [w*span, (w+1)*span).
    int64_t span = (job_n_ + job_workers_ - 1) / job_workers_;
    int64_t begin = std::min<int64_t>(id * span, job_n_);
    int64_t end = std::min<int64_t>(begin + span, job_n_);
    for (int64_t b = begin; b < end; b += job_chunk_)
      (*job_fn_)(b, std::min(b + job_chunk_, end));
  }

  std::mutex mu_, spawn_mu_;
  std::condition_variable cv_, done_cv_;
  std::vector<std::thread> threads_;
  const std::function<void(int64_t, int64_t)>* job_fn_ = nullptr;
  int64_t job_n_ = 0, job_chunk_ = 0;
  int job_workers_ = 1;
  int pending_ = 0;
  uint64_t epoch_ = 0;
  bool stop_ = false;
};

}  // namespace

void set_num_threads(int n) { g_num_threads.store(n); }

int num_threads() {
  int n = g_num_threads.load();
  if (n <= 0) n = (int)std::thread::hardware_concurrency();
  return std::max(1, n);
}

void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& range_fn,
                  int64_t grain) {
  if (n <= 0) return;
  int workers = num_threads();
  if (workers == 1 || n <= grain) {
    range_fn(0, n);
    return;
  }
  workers = (int)std::min<int64_t>(workers, (n + grain - 1) / grain);
  Pool::instance().run(workers, n, grain, range_fn);
}

}  // namespace hummorph
