#pragma once

#include <vector>

#include "rgbdmae/autograd.hpp"
#include "rgbdmae/tokenizer.hpp"

namespace rgbdmae {

enum class MaskStrategy { Random, Tube, Frame };

const char* mask_strategy_name(MaskStrategy s);
MaskStrategy parse_mask_strategy(const std::string& name);

// Exact masked counts, never "approximately ratio":
//   random: round(ratio*N) tokens
//   tube:   round(ratio*S) spatial cells, masked in every temporal slice
//   frame:  round(ratio*n_t) whole temporal slices
// Returns a visibility vector (1 = visible). Deterministic given seed.
std::vector<std::uint8_t> sample_mask(const GridGeometry& geom, MaskStrategy strategy, double ratio, u64 seed);

i64 target_masked(const GridGeometry& geom, MaskStrategy strategy, double ratio);

struct MaskConfig {
  MaskStrategy rgb_strategy = MaskStrategy::Random;
  double rgb_ratio = 0.8;
  MaskStrategy depth_strategy = MaskStrategy::Random;
  double depth_ratio = 0.8;
  bool correlated = false;  // reuse one seed for both modalities
};

MaskConfig default_image_mask();  // random 0.8 / random 0.8
MaskConfig default_video_mask();  // tube 0.9 / tube 0.9

struct MaskPlan {
  GridGeometry geometry;
  std::vector<std::uint8_t> visible_rgb;
  std::vector<std::uint8_t> visible_depth;
  double ratio_rgb = 0.0;
  double ratio_depth = 0.0;
  u64 seed = 0;

  const std::vector<std::uint8_t>& visible(Modality m) const {
    return m == Modality::Rgb ? visible_rgb : visible_depth;
  }
  std::vector<i64> visible_indices(Modality m) const;
  std::vector<i64> masked_indices(Modality m) const;
  // grid positions visible in BOTH modalities (ascending)
  std::vector<i64> intersection_visible() const;
};

MaskPlan make_plan(const GridGeometry& geom, const MaskConfig& cfg, u64 seed);
MaskPlan all_visible_plan(const GridGeometry& geom);

// Order-preserving selection of visible token rows out of a (B*N, D) batch.
// row_map[i] is the source row of output row i, recorded for later scatter.
struct TokenSelection {
  std::vector<i64> row_map;
  i64 batch = 0;
  i64 per_sample = 0;  // visible tokens per sample
};

TokenSelection selection_for(const MaskPlan& plan, Modality m, i64 batch);
Var select_visible(Tape& tape, Var tokens, const TokenSelection& sel);

}  // namespace rgbdmae
