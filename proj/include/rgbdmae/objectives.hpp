#pragma once

#include <vector>

#include "rgbdmae/autograd.hpp"
#include "rgbdmae/mat.hpp"

namespace rgbdmae {

inline constexpr double kPatchNormVarFloor = 1e-6;  // variance floor for target standardization
inline constexpr double kFeatureNormFloor = 1e-8;   // L2-norm floor before cosine similarity

struct LossWeights {
  double alpha = 1.0;   // rgb reconstruction
  double beta = 0.1;    // depth reconstruction
  double gamma = 0.01;  // contrastive
  double eta = 0.01;    // matching
  double tau = 0.07;    // contrastive temperature
  bool symmetric_contrastive = false;

  void validate() const;
};

// Appendix presets.
LossWeights video_loss_defaults();   // UCF-101 column: 1.0 / 0.1 / 0.01 / 0.01
LossWeights orar_loss_preset();      // OR-AR column:   1.0 / 0.5 / 0.2  / 0.1
void image_stage2_defaults(double& alpha, double& beta);  // 0.1 / 1.0

enum class DepthLossMode { ImageL1, VideoMse };

struct LossReport {
  double total = 0.0;
  double rgb = 0.0;
  double depth = 0.0;
  double contrastive = 0.0;
  double matching = 0.0;
  i64 masked_rgb = 0;
  i64 masked_depth = 0;
  i64 contrastive_pairs = 0;  // K
  i64 matching_pairs = 0;
};

// Per-patch standardization: (x - mean) / sqrt(var + floor), over each row.
Mat normalize_patch_targets(const Mat& patches, double var_floor = kPatchNormVarFloor);

// Reconstruction losses over masked rows only. `masked_rows` indexes into the
// (B*N)-row prediction/target matrices; the loss is the mean over those rows
// of the per-row mean absolute (L1) or squared (MSE) deviation.
Var masked_recon_loss(Tape& tape, Var pred, const Mat& normalized_target, const std::vector<i64>& masked_rows,
                      bool l1);

double loss_rgb(const Mat& pred, const Mat& raw_target, const std::vector<i64>& masked_rows);
double loss_depth(const Mat& pred, const Mat& raw_target, const std::vector<i64>& masked_rows, DepthLossMode mode);

// Patch-level InfoNCE, one-directional rgb->depth: features are L2-normalized
// per token, similarities are taken within each sample's K paired positions,
// and the loss is the mean row-wise cross entropy against the diagonal.
Var contrastive_loss(Tape& tape, Var feat_rgb, Var feat_depth, i64 batch, i64 pairs, double tau,
                     bool symmetric = false);
double loss_contrastive(const Mat& feat_rgb, const Mat& feat_depth, i64 batch, i64 pairs, double tau,
                        bool symmetric = false);

// Two-class cross entropy; label 1 = matched pair.
Var matching_loss(Tape& tape, Var logits, const std::vector<int>& labels);
double loss_matching(const Mat& logits, const std::vector<int>& labels);

enum class MatchMode { Random, AllPositive, AllNegative };

struct MatchingBatch {
  std::vector<i64> depth_of;  // depth_of[i] = batch item whose depth is paired with rgb i
  std::vector<int> labels;    // 1 = matched
};

// Coin-flip positives, in-batch substituted negatives. A batch of one can
// only produce a positive pair.
MatchingBatch make_matching_batch(i64 batch, u64 seed, MatchMode mode = MatchMode::Random);

// total = alpha*rgb + beta*depth + gamma*contrastive + eta*matching
LossReport combine_report(double rgb, double depth, double contrastive, double matching, const LossWeights& w);
double loss_stage2(double rgb, double depth, double alpha, double beta);

}  // namespace rgbdmae
