#include "rgbdmae/metrics.hpp"

#include <cmath>

namespace rgbdmae {

ConfusionMatrix::ConfusionMatrix(int classes, int ignore_index)
    : classes_(classes), ignore_index_(ignore_index), counts_(static_cast<size_t>(classes) * classes, 0) {
  if (classes < 2) throw ValidationError("confusion matrix needs at least two classes");
}

void ConfusionMatrix::add(int gt, int pred) {
  if (gt == ignore_index_) return;
  if (gt < 0 || gt >= classes_ || pred < 0 || pred >= classes_)
    throw ValidationError("confusion matrix label out of range: gt=" + std::to_string(gt) +
                          " pred=" + std::to_string(pred));
  ++at(gt, pred);
}

void ConfusionMatrix::add_map(const std::vector<int>& gt, const std::vector<int>& pred) {
  if (gt.size() != pred.size()) throw ValidationError("confusion add_map: size mismatch");
  for (size_t i = 0; i < gt.size(); ++i) add(gt[i], pred[i]);
}

i64 ConfusionMatrix::total() const {
  i64 t = 0;
  for (i64 v : counts_) t += v;
  return t;
}

double miou(const ConfusionMatrix& c) {
  if (c.total() == 0) throw ValidationError("mIoU of an empty confusion matrix");
  double sum = 0.0;
  int scored = 0;
  for (int k = 0; k < c.classes(); ++k) {
    i64 tp = c.at(k, k);
    i64 fp = 0, fn = 0;
    for (int j = 0; j < c.classes(); ++j) {
      if (j == k) continue;
      fp += c.at(j, k);
      fn += c.at(k, j);
    }
    if (tp + fp + fn == 0) continue;  // class absent from both gt and prediction
    sum += static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    ++scored;
  }
  if (scored == 0) throw ValidationError("mIoU: no scorable classes");
  return sum / scored;
}

double delta1(const std::vector<double>& pred, const std::vector<double>& gt,
              const std::vector<std::uint8_t>& valid) {
  if (pred.size() != gt.size() || pred.size() != valid.size())
    throw ValidationError("delta1: buffer sizes differ");
  constexpr double kPredFloor = 1e-6;
  i64 n = 0, hit = 0;
  for (size_t i = 0; i < pred.size(); ++i) {
    if (!valid[i]) continue;
    if (!(gt[i] > 0.0)) throw ValidationError("delta1: non-positive ground-truth depth on a valid pixel");
    double p = std::max(pred[i], kPredFloor);
    double ratio = std::max(p / gt[i], gt[i] / p);
    ++n;
    if (ratio < 1.25) ++hit;
  }
  if (n == 0) throw ValidationError("delta1: no valid pixels");
  return 100.0 * static_cast<double>(hit) / static_cast<double>(n);
}

double top1(const std::vector<int>& pred, const std::vector<int>& gt) {
  if (pred.size() != gt.size() || pred.empty())
    throw ValidationError("top1: prediction/label lengths differ or are empty");
  i64 hit = 0;
  for (size_t i = 0; i < pred.size(); ++i)
    if (pred[i] == gt[i]) ++hit;
  return 100.0 * static_cast<double>(hit) / static_cast<double>(pred.size());
}

}  // namespace rgbdmae
