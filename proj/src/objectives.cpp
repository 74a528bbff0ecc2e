#include "rgbdmae/objectives.hpp"

#include <cmath>

#include "rgbdmae/rng.hpp"

namespace rgbdmae {

void LossWeights::validate() const {
  for (double v : {alpha, beta, gamma, eta})
    if (!(v >= 0.0) || !std::isfinite(v)) throw ValidationError("loss weights must be non-negative and finite");
  if (!(tau > 0.0)) throw ValidationError("temperature must be positive, got " + std::to_string(tau));
}

LossWeights video_loss_defaults() { return LossWeights{1.0, 0.1, 0.01, 0.01, 0.07, false}; }
LossWeights orar_loss_preset() { return LossWeights{1.0, 0.5, 0.2, 0.1, 0.07, false}; }
void image_stage2_defaults(double& alpha, double& beta) {
  alpha = 0.1;
  beta = 1.0;
}

Mat normalize_patch_targets(const Mat& patches, double var_floor) {
  Mat out(patches.rows, patches.cols);
  const i64 n = patches.cols;
  for (i64 r = 0; r < patches.rows; ++r) {
    const double* x = patches.row(r);
    double mean = 0.0;
    for (i64 j = 0; j < n; ++j) mean += x[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (i64 j = 0; j < n; ++j) var += (x[j] - mean) * (x[j] - mean);
    var /= static_cast<double>(n);
    double inv = 1.0 / std::sqrt(var + var_floor);
    double* o = out.row(r);
    for (i64 j = 0; j < n; ++j) o[j] = (x[j] - mean) * inv;
  }
  return out;
}

Var masked_recon_loss(Tape& tape, Var pred, const Mat& normalized_target, const std::vector<i64>& masked_rows,
                      bool l1) {
  if (masked_rows.empty()) throw ValidationError("reconstruction loss over an empty masked set");
  const i64 rows = tape.value(pred).rows, cols = tape.value(pred).cols;
  if (rows != normalized_target.rows || cols != normalized_target.cols)
    throw DimensionError("recon loss: pred " + tape.value(pred).shape_str() + " vs target " +
                         normalized_target.shape_str());

  Mat target_masked(static_cast<i64>(masked_rows.size()), cols);
  for (size_t i = 0; i < masked_rows.size(); ++i)
    std::memcpy(target_masked.row(static_cast<i64>(i)), normalized_target.row(masked_rows[i]),
                sizeof(double) * static_cast<size_t>(cols));

  Var pred_masked = tape.gather_rows(pred, masked_rows);
  Var resid = tape.sub(pred_masked, tape.input(std::move(target_masked)));
  Var elem = l1 ? tape.abs(resid) : tape.square(resid);
  double inv = 1.0 / (static_cast<double>(masked_rows.size()) * static_cast<double>(cols));
  return tape.weighted_sum(elem, Mat::full(static_cast<i64>(masked_rows.size()), cols, inv));
}

double loss_rgb(const Mat& pred, const Mat& raw_target, const std::vector<i64>& masked_rows) {
  Tape t;
  Var p = t.input(pred);
  return t.scalar(masked_recon_loss(t, p, normalize_patch_targets(raw_target), masked_rows, /*l1=*/false));
}

double loss_depth(const Mat& pred, const Mat& raw_target, const std::vector<i64>& masked_rows, DepthLossMode mode) {
  Tape t;
  Var p = t.input(pred);
  return t.scalar(masked_recon_loss(t, p, normalize_patch_targets(raw_target), masked_rows,
                                    mode == DepthLossMode::ImageL1));
}

Var contrastive_loss(Tape& tape, Var feat_rgb, Var feat_depth, i64 batch, i64 pairs, double tau,
                     bool symmetric) {
  if (pairs < 1) throw ValidationError("contrastive loss needs at least one paired position");
  if (!(tau > 0.0)) throw ValidationError("temperature must be positive");
  const Mat &fr = tape.value(feat_rgb), &fd = tape.value(feat_depth);
  if (fr.rows != batch * pairs || fd.rows != batch * pairs || fr.cols != fd.cols)
    throw DimensionError("contrastive loss: rgb " + fr.shape_str() + " depth " + fd.shape_str() + " for B=" +
                         std::to_string(batch) + " K=" + std::to_string(pairs));

  Var nr = tape.l2normalize_rows(feat_rgb, kFeatureNormFloor);
  Var nd = tape.l2normalize_rows(feat_depth, kFeatureNormFloor);

  // -1/K sum_i log softmax(S_i/tau)[i], averaged over the batch (and over
  // both directions when symmetric)
  Mat diag_w(pairs, pairs);
  int directions = symmetric ? 2 : 1;
  double coeff = -1.0 / (static_cast<double>(pairs) * static_cast<double>(batch) * directions);
  for (i64 i = 0; i < pairs; ++i) diag_w.at(i, i) = coeff;

  Var total = tape.zero_scalar();
  for (i64 b = 0; b < batch; ++b) {
    Var rb = tape.slice_rows(nr, b * pairs, pairs);
    Var db = tape.slice_rows(nd, b * pairs, pairs);
    Var sims = tape.scale(tape.matmul_nt(rb, db), 1.0 / tau);
    total = tape.add(total, tape.weighted_sum(tape.log_softmax_rows(sims), diag_w));
    if (symmetric) {
      Var sims_dr = tape.scale(tape.matmul_nt(db, rb), 1.0 / tau);
      total = tape.add(total, tape.weighted_sum(tape.log_softmax_rows(sims_dr), diag_w));
    }
  }
  return total;
}

double loss_contrastive(const Mat& feat_rgb, const Mat& feat_depth, i64 batch, i64 pairs, double tau,
                        bool symmetric) {
  Tape t;
  return t.scalar(contrastive_loss(t, t.input(feat_rgb), t.input(feat_depth), batch, pairs, tau, symmetric));
}

Var matching_loss(Tape& tape, Var logits, const std::vector<int>& labels) {
  const Mat& lv = tape.value(logits);
  if (lv.cols != 2) throw DimensionError("matching logits must have two columns, got " + lv.shape_str());
  if (lv.rows != static_cast<i64>(labels.size()) || labels.empty())
    throw ValidationError("matching loss: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(lv.rows) + " logit rows");
  Mat w(lv.rows, 2);
  double coeff = -1.0 / static_cast<double>(lv.rows);
  for (i64 i = 0; i < lv.rows; ++i) {
    int y = labels[static_cast<size_t>(i)];
    if (y != 0 && y != 1) throw ValidationError("matching labels must be 0 or 1, got " + std::to_string(y));
    w.at(i, y) = coeff;
  }
  return tape.weighted_sum(tape.log_softmax_rows(logits), std::move(w));
}

double loss_matching(const Mat& logits, const std::vector<int>& labels) {
  Tape t;
  return t.scalar(matching_loss(t, t.input(logits), labels));
}

MatchingBatch make_matching_batch(i64 batch, u64 seed, MatchMode mode) {
  if (batch < 1) throw ValidationError("matching batch must not be empty");
  if (batch == 1 && mode == MatchMode::AllNegative)
    throw ValidationError("a batch of one admits no negative pairing");
  Rng rng(mix_seed(seed, 0x3a7c4));
  MatchingBatch out;
  out.depth_of.resize(static_cast<size_t>(batch));
  out.labels.resize(static_cast<size_t>(batch));
  for (i64 i = 0; i < batch; ++i) {
    bool positive;
    switch (mode) {
      case MatchMode::AllPositive: positive = true; break;
      case MatchMode::AllNegative: positive = false; break;
      default: positive = batch == 1 || rng.uniform() < 0.5; break;
    }
    if (positive) {
      out.depth_of[static_cast<size_t>(i)] = i;
      out.labels[static_cast<size_t>(i)] = 1;
    } else {
      i64 j = rng.range(0, batch - 1);
      if (j >= i) ++j;  // uniform over the other items
      out.depth_of[static_cast<size_t>(i)] = j;
      out.labels[static_cast<size_t>(i)] = 0;
    }
  }
  return out;
}

LossReport combine_report(double rgb, double depth, double contrastive, double matching, const LossWeights& w) {
  w.validate();
  LossReport r;
  r.rgb = rgb;
  r.depth = depth;
  r.contrastive = contrastive;
  r.matching = matching;
  r.total = w.alpha * rgb + w.beta * depth + w.gamma * contrastive + w.eta * matching;
  return r;
}

double loss_stage2(double rgb, double depth, double alpha, double beta) {
  if (alpha < 0.0 || beta < 0.0) throw ValidationError("stage-2 weights must be non-negative");
  return alpha * rgb + beta * depth;
}

}  // namespace rgbdmae
