#pragma once

#include <vector>

#include "rgbdmae/common.hpp"

namespace rgbdmae {

inline constexpr int kIgnoreIndex = 255;

// Rows are ground truth, columns are predictions. Pixels whose gt equals
// ignore_index are not scored.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int classes, int ignore_index = kIgnoreIndex);

  void add(int gt, int pred);
  void add_map(const std::vector<int>& gt, const std::vector<int>& pred);

  int classes() const { return classes_; }
  i64 at(int gt, int pred) const { return counts_[static_cast<size_t>(gt) * classes_ + pred]; }
  i64& at(int gt, int pred) { return counts_[static_cast<size_t>(gt) * classes_ + pred]; }
  i64 total() const;

 private:
  int classes_;
  int ignore_index_;
  std::vector<i64> counts_;
};

// mean of per-class TP/(TP+FP+FN); classes absent from both gt and pred are
// excluded from the mean
double miou(const ConfusionMatrix& confusion);

// percentage of valid pixels with max(pred/gt, gt/pred) < 1.25
double delta1(const std::vector<double>& pred, const std::vector<double>& gt,
              const std::vector<std::uint8_t>& valid);

// exact-match percentage
double top1(const std::vector<int>& pred, const std::vector<int>& gt);

}  // namespace rgbdmae
