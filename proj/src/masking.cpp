#include "rgbdmae/masking.hpp"

#include "rgbdmae/rng.hpp"

namespace rgbdmae {

const char* mask_strategy_name(MaskStrategy s) {
  switch (s) {
    case MaskStrategy::Random: return "random";
    case MaskStrategy::Tube: return "tube";
    case MaskStrategy::Frame: return "frame";
  }
  return "?";
}

MaskStrategy parse_mask_strategy(const std::string& name) {
  if (name == "random") return MaskStrategy::Random;
  if (name == "tube") return MaskStrategy::Tube;
  if (name == "frame") return MaskStrategy::Frame;
  throw ConfigError("unknown mask strategy: " + name);
}

i64 target_masked(const GridGeometry& geom, MaskStrategy strategy, double ratio) {
  switch (strategy) {
    case MaskStrategy::Random: return round_half_up(ratio * static_cast<double>(geom.tokens()));
    case MaskStrategy::Tube: return geom.n_t * round_half_up(ratio * static_cast<double>(geom.spatial_cells()));
    case MaskStrategy::Frame: return round_half_up(ratio * geom.n_t) * geom.spatial_cells();
  }
  return 0;
}

std::vector<std::uint8_t> sample_mask(const GridGeometry& geom, MaskStrategy strategy, double ratio, u64 seed) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw ValidationError("mask ratio must lie in [0,1], got " + std::to_string(ratio));
  if (strategy != MaskStrategy::Random && geom.n_t <= 1)
    throw ValidationError(std::string(mask_strategy_name(strategy)) + " masking requires a temporal grid (n_t > 1)");

  const i64 n = geom.tokens();
  std::vector<std::uint8_t> visible(static_cast<size_t>(n), 1);
  Rng rng(mix_seed(seed, static_cast<u64>(strategy) + 0x51ed));
  switch (strategy) {
    case MaskStrategy::Random: {
      i64 k = round_half_up(ratio * static_cast<double>(n));
      for (i64 idx : rng.choose(n, k)) visible[static_cast<size_t>(idx)] = 0;
      break;
    }
    case MaskStrategy::Tube: {
      i64 s = geom.spatial_cells();
      i64 k = round_half_up(ratio * static_cast<double>(s));
      for (i64 cell : rng.choose(s, k))
        for (int ti = 0; ti < geom.n_t; ++ti) visible[static_cast<size_t>(ti * s + cell)] = 0;
      break;
    }
    case MaskStrategy::Frame: {
      i64 k = round_half_up(ratio * geom.n_t);
      for (i64 slice : rng.choose(geom.n_t, k)) {
        i64 s = geom.spatial_cells();
        for (i64 c = 0; c < s; ++c) visible[static_cast<size_t>(slice * s + c)] = 0;
      }
      break;
    }
  }
  return visible;
}

MaskConfig default_image_mask() { return MaskConfig{MaskStrategy::Random, 0.8, MaskStrategy::Random, 0.8, false}; }
MaskConfig default_video_mask() { return MaskConfig{MaskStrategy::Tube, 0.9, MaskStrategy::Tube, 0.9, false}; }

std::vector<i64> MaskPlan::visible_indices(Modality m) const {
  const auto& v = visible(m);
  std::vector<i64> idx;
  for (size_t i = 0; i < v.size(); ++i)
    if (v[i]) idx.push_back(static_cast<i64>(i));
  return idx;
}

std::vector<i64> MaskPlan::masked_indices(Modality m) const {
  const auto& v = visible(m);
  std::vector<i64> idx;
  for (size_t i = 0; i < v.size(); ++i)
    if (!v[i]) idx.push_back(static_cast<i64>(i));
  return idx;
}

std::vector<i64> MaskPlan::intersection_visible() const {
  std::vector<i64> idx;
  for (size_t i = 0; i < visible_rgb.size(); ++i)
    if (visible_rgb[i] && visible_depth[i]) idx.push_back(static_cast<i64>(i));
  return idx;
}

MaskPlan make_plan(const GridGeometry& geom, const MaskConfig& cfg, u64 seed) {
  MaskPlan plan;
  plan.geometry = geom;
  plan.seed = seed;
  plan.ratio_rgb = cfg.rgb_ratio;
  plan.ratio_depth = cfg.depth_ratio;
  u64 rgb_seed = mix_seed(seed, 0xa11ce);
  u64 depth_seed = cfg.correlated ? rgb_seed : mix_seed(seed, 0xb0b);
  plan.visible_rgb = sample_mask(geom, cfg.rgb_strategy, cfg.rgb_ratio, rgb_seed);
  plan.visible_depth = sample_mask(geom, cfg.depth_strategy, cfg.depth_ratio, depth_seed);
  return plan;
}

MaskPlan all_visible_plan(const GridGeometry& geom) {
  MaskPlan plan;
  plan.geometry = geom;
  plan.visible_rgb.assign(static_cast<size_t>(geom.tokens()), 1);
  plan.visible_depth.assign(static_cast<size_t>(geom.tokens()), 1);
  return plan;
}

TokenSelection selection_for(const MaskPlan& plan, Modality m, i64 batch) {
  std::vector<i64> per = plan.visible_indices(m);
  TokenSelection sel;
  sel.batch = batch;
  sel.per_sample = static_cast<i64>(per.size());
  const i64 n = plan.geometry.tokens();
  sel.row_map.reserve(static_cast<size_t>(batch) * per.size());
  for (i64 b = 0; b < batch; ++b)
    for (i64 i : per) sel.row_map.push_back(b * n + i);
  return sel;
}

Var select_visible(Tape& tape, Var tokens, const TokenSelection& sel) {
  const Mat& v = tape.value(tokens);
  if (!sel.row_map.empty() && sel.row_map.back() >= v.rows)
    throw DimensionError("select_visible: plan geometry inconsistent with token batch of " +
                         std::to_string(v.rows) + " rows");
  return tape.gather_rows(tokens, sel.row_map);
}

}  // namespace rgbdmae
