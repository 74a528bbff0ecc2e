#include "rgbdmae/mat.hpp"

#include <atomic>
#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>

namespace rgbdmae {
namespace {

// Tiny persistent pool: jobs are (begin,end) row ranges. Each output row is
// written by exactly one worker, so results do not depend on the thread count.
class RowPool {
 public:
  explicit RowPool(int workers) {
    for (int i = 0; i < workers; ++i) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  ~RowPool() {
    {
      std::unique_lock<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void run(i64 total, const std::function<void(i64, i64)>& body) {
    int parts = static_cast<int>(threads_.size()) + 1;
    i64 chunk = (total + parts - 1) / parts;
    {
      std::unique_lock<std::mutex> lk(mu_);
      body_ = &body;
      pending_ = 0;
      jobs_.clear();
      for (i64 b = chunk; b < total; b += chunk) {
        jobs_.push_back({b, std::min(b + chunk, total)});
        ++pending_;
      }
    }
    cv_.notify_all();
    body(0, std::min(chunk, total));  // caller thread takes the first chunk
    std::unique_lock<std::mutex> lk(mu_);
    done_cv_.wait(lk, [this] { return pending_ == 0 && jobs_.empty(); });
  }

 private:
  void worker_loop() {
    for (;;) {
      std::pair<i64, i64> job;
      {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [this] { return stop_ || !jobs_.empty(); });
        if (stop_) return;
        job = jobs_.back();
        jobs_.pop_back();
      }
      (*body_)(job.first, job.second);
      {
        std::unique_lock<std::mutex> lk(mu_);
        --pending_;
      }
      done_cv_.notify_one();
    }
  }

  std::vector<std::thread> threads_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  std::vector<std::pair<i64, i64>> jobs_;
  const std::function<void(i64, i64)>* body_ = nullptr;
  int pending_ = 0;
  bool stop_ = false;
};

int g_threads = 0;  // 0 = auto

RowPool* pool() {
  static RowPool p(std::max(1u, std::thread::hardware_concurrency()) - 1);
  return &p;
}

constexpr i64 kParallelFlops = 1 << 18;

void parallel_rows(i64 total_rows, i64 flops, const std::function<void(i64, i64)>& body) {
  if (g_threads == 1 || flops < kParallelFlops || total_rows < 2) {
    body(0, total_rows);
    return;
  }
  pool()->run(total_rows, body);
}

}  // namespace

void set_num_threads(int n) { g_threads = n; }
int num_threads() { return g_threads; }

void mm_nn_acc(const Mat& a, const Mat& b, Mat& c) {
  if (a.cols != b.rows || c.rows != a.rows || c.cols != b.cols)
    throw DimensionError("matmul nn: " + a.shape_str() + " x " + b.shape_str() + " -> " + c.shape_str());
  const i64 m = a.rows, k = a.cols, n = b.cols;
  parallel_rows(m, m * k * n, [&](i64 r0, i64 r1) {
    for (i64 i = r0; i < r1; ++i) {
      const double* ai = a.row(i);
      double* ci = c.row(i);
      for (i64 p = 0; p < k; ++p) {
        const double av = ai[p];
        if (av == 0.0) continue;
        const double* bp = b.row(p);
        for (i64 j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  });
}

void mm_nt_acc(const Mat& a, const Mat& b, Mat& c) {
  if (a.cols != b.cols || c.rows != a.rows || c.cols != b.rows)
    throw DimensionError("matmul nt: " + a.shape_str() + " x " + b.shape_str() + "^T -> " + c.shape_str());
  const i64 m = a.rows, k = a.cols, n = b.rows;
  parallel_rows(m, m * k * n, [&](i64 r0, i64 r1) {
    for (i64 i = r0; i < r1; ++i) {
      const double* ai = a.row(i);
      double* ci = c.row(i);
      for (i64 j = 0; j < n; ++j) {
        const double* bj = b.row(j);
        double acc = 0.0;
        for (i64 p = 0; p < k; ++p) acc += ai[p] * bj[p];
        ci[j] += acc;
      }
    }
  });
}

void mm_tn_acc(const Mat& a, const Mat& b, Mat& c) {
  if (a.rows != b.rows || c.rows != a.cols || c.cols != b.cols)
    throw DimensionError("matmul tn: " + a.shape_str() + "^T x " + b.shape_str() + " -> " + c.shape_str());
  const i64 m = a.cols, k = a.rows, n = b.cols;
  parallel_rows(m, m * k * n, [&](i64 r0, i64 r1) {
    for (i64 i = r0; i < r1; ++i) {
      double* ci = c.row(i);
      for (i64 p = 0; p < k; ++p) {
        const double av = a.at(p, i);
        if (av == 0.0) continue;
        const double* bp = b.row(p);
        for (i64 j = 0; j < n; ++j) ci[j] += av * bp[j];
      }
    }
  });
}

Mat mm_nn(const Mat& a, const Mat& b) {
  Mat c(a.rows, b.cols);
  mm_nn_acc(a, b, c);
  return c;
}

Mat mm_nt(const Mat& a, const Mat& b) {
  Mat c(a.rows, b.rows);
  mm_nt_acc(a, b, c);
  return c;
}

}  // namespace rgbdmae
