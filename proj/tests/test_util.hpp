#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "rgbdmae/autograd.hpp"
#include "rgbdmae/rng.hpp"

namespace rgbdmae::testutil {

inline Mat random_mat(i64 rows, i64 cols, u64 seed, double scale = 1.0) {
  Mat m(rows, cols);
  Rng rng(seed);
  for (double& v : m.d) v = scale * rng.normal();
  return m;
}

// relative error with an absolute floor so true-zero gradients compare cleanly
inline double rel_err(double a, double b, double floor_ = 1e-6) {
  return std::fabs(a - b) / std::max(std::fabs(a) + std::fabs(b), floor_);
}

// Central finite differences of a scalar function of one Mat entry.
inline double fd_grad(const std::function<double(const Mat&)>& f, Mat x, i64 index, double eps = 1e-5) {
  double orig = x.d[static_cast<size_t>(index)];
  x.d[static_cast<size_t>(index)] = orig + eps;
  double hi = f(x);
  x.d[static_cast<size_t>(index)] = orig - eps;
  double lo = f(x);
  return (hi - lo) / (2.0 * eps);
}

// Verifies analytic gradients of every entry of every listed param against
// central differences. `loss` must rebuild the graph from current values.
inline double max_param_grad_err(const std::function<double(bool)>& loss_and_maybe_backward,
                                 std::vector<Param*> params, double eps) {
  loss_and_maybe_backward(true);  // fills grads
  std::vector<Mat> analytic;
  for (Param* p : params) analytic.push_back(p->grad);
  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Param* p = params[pi];
    for (i64 j = 0; j < p->value.numel(); ++j) {
      double orig = p->value.d[static_cast<size_t>(j)];
      p->value.d[static_cast<size_t>(j)] = orig + eps;
      double hi = loss_and_maybe_backward(false);
      p->value.d[static_cast<size_t>(j)] = orig - eps;
      double lo = loss_and_maybe_backward(false);
      p->value.d[static_cast<size_t>(j)] = orig;
      double numeric = (hi - lo) / (2.0 * eps);
      worst = std::max(worst, rel_err(analytic[pi].d[static_cast<size_t>(j)], numeric));
    }
  }
  return worst;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = (std::filesystem::temp_directory_path() / ("rgbdmae_" + tag + "_" + std::to_string(::getpid()))).string();
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::string& path() const { return path_; }
  std::string sub(const std::string& name) const { return path_ + "/" + name; }

 private:
  std::string path_;
};

}  // namespace rgbdmae::testutil
