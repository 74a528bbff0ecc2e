#pragma once

#include <algorithm>
#include <cstring>
#include <string>
#include <vector>

#include "rgbdmae/common.hpp"

namespace rgbdmae {

// Dense row-major matrix of doubles. Higher-rank tensors (B, N, D) are kept
// flat as (B*N, D) with the batch bookkeeping handled by the caller.
struct Mat {
  i64 rows = 0;
  i64 cols = 0;
  std::vector<double> d;

  Mat() = default;
  Mat(i64 r, i64 c) : rows(r), cols(c), d(static_cast<size_t>(r * c), 0.0) {}

  static Mat zeros(i64 r, i64 c) { return Mat(r, c); }
  static Mat full(i64 r, i64 c, double v) {
    Mat m(r, c);
    std::fill(m.d.begin(), m.d.end(), v);
    return m;
  }

  i64 numel() const { return rows * cols; }
  double* row(i64 r) { return d.data() + r * cols; }
  const double* row(i64 r) const { return d.data() + r * cols; }
  double& at(i64 r, i64 c) { return d[static_cast<size_t>(r * cols + c)]; }
  double at(i64 r, i64 c) const { return d[static_cast<size_t>(r * cols + c)]; }

  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
  std::string shape_str() const { return "(" + std::to_string(rows) + "," + std::to_string(cols) + ")"; }

  void fill(double v) { std::fill(d.begin(), d.end(), v); }
};

// Worker count for the matmul kernels. Partitioning is by output row, so the
// result is bitwise identical for any thread count.
void set_num_threads(int n);
int num_threads();

// c += a * b            (m,k)x(k,n)
void mm_nn_acc(const Mat& a, const Mat& b, Mat& c);
// c += a * b^T          (m,k)x(n,k)
void mm_nt_acc(const Mat& a, const Mat& b, Mat& c);
// c += a^T * b          (k,m)x(k,n)
void mm_tn_acc(const Mat& a, const Mat& b, Mat& c);

Mat mm_nn(const Mat& a, const Mat& b);
Mat mm_nt(const Mat& a, const Mat& b);

}  // namespace rgbdmae
