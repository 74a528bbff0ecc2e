#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "rgbdmae/masking.hpp"
#include "test_util.hpp"

using namespace rgbdmae;

namespace {

i64 count_masked(const std::vector<std::uint8_t>& vis) {
  i64 c = 0;
  for (auto v : vis)
    if (!v) ++c;
  return c;
}

GridGeometry grid(int t, int h, int w) {
  GridGeometry g;
  g.n_t = t;
  g.n_h = h;
  g.n_w = w;
  return g;
}

}  // namespace

TEST_CASE("random masking hits the exact requested count") {
  GridGeometry g = grid(1, 2, 5);  // N = 10
  auto vis = sample_mask(g, MaskStrategy::Random, 0.9, 123);
  CHECK(count_masked(vis) == 9);

  // boundary ratios
  CHECK(count_masked(sample_mask(g, MaskStrategy::Random, 0.0, 5)) == 0);
  CHECK(count_masked(sample_mask(g, MaskStrategy::Random, 1.0, 5)) == 10);
}

TEST_CASE("tube masking: per-cell counts and temporal consistency on (8,14,14)") {
  GridGeometry g = grid(8, 14, 14);
  auto vis = sample_mask(g, MaskStrategy::Tube, 0.9, 7);
  CHECK(count_masked(vis) == 1408);  // 8 * round(0.9*196) = 8*176
  // every spatial cell is identical across the temporal slices
  const i64 s = g.spatial_cells();
  for (i64 cell = 0; cell < s; ++cell)
    for (int t = 1; t < g.n_t; ++t) CHECK(vis[static_cast<size_t>(t * s + cell)] == vis[static_cast<size_t>(cell)]);
  // effective ratio 1408/1568
  CHECK(static_cast<double>(count_masked(vis)) / g.tokens() == doctest::Approx(1408.0 / 1568.0));
}

TEST_CASE("frame masking is all-or-nothing per slice") {
  GridGeometry g = grid(8, 14, 14);
  auto vis = sample_mask(g, MaskStrategy::Frame, 0.5, 11);
  CHECK(count_masked(vis) == 4 * 196);
  const i64 s = g.spatial_cells();
  for (int t = 0; t < g.n_t; ++t) {
    i64 masked = 0;
    for (i64 c = 0; c < s; ++c)
      if (!vis[static_cast<size_t>(t * s + c)]) ++masked;
    CHECK((masked == 0 || masked == s));
  }
}

TEST_CASE("tube and frame strategies reject image geometry; bad ratios rejected") {
  GridGeometry g = grid(1, 4, 4);
  CHECK_THROWS_AS(sample_mask(g, MaskStrategy::Tube, 0.5, 3), ValidationError);
  CHECK_THROWS_AS(sample_mask(g, MaskStrategy::Frame, 0.5, 3), ValidationError);
  CHECK_THROWS_AS(sample_mask(g, MaskStrategy::Random, -0.1, 3), ValidationError);
  CHECK_THROWS_AS(sample_mask(g, MaskStrategy::Random, 1.5, 3), ValidationError);
}

TEST_CASE("make_plan: default image config masks 157 of 196 per modality") {
  GridGeometry g = grid(1, 14, 14);
  MaskPlan plan = make_plan(g, default_image_mask(), 42);
  CHECK(count_masked(plan.visible_rgb) == 157);  // round(0.8*196)
  CHECK(count_masked(plan.visible_depth) == 157);
  CHECK(plan.visible_rgb != plan.visible_depth);  // independent draws
}

TEST_CASE("plans are deterministic in the seed and differ across seeds") {
  GridGeometry g = grid(4, 4, 4);
  MaskPlan a = make_plan(g, default_video_mask(), 9);
  MaskPlan b = make_plan(g, default_video_mask(), 9);
  CHECK(a.visible_rgb == b.visible_rgb);
  CHECK(a.visible_depth == b.visible_depth);
  MaskPlan c = make_plan(g, default_video_mask(), 10);
  CHECK((a.visible_rgb != c.visible_rgb || a.visible_depth != c.visible_depth));
}

TEST_CASE("correlated switch reuses one seed for both modalities") {
  GridGeometry g = grid(1, 8, 8);
  MaskConfig cfg = default_image_mask();
  cfg.correlated = true;
  MaskPlan plan = make_plan(g, cfg, 77);
  CHECK(plan.visible_rgb == plan.visible_depth);
}

TEST_CASE("random-strategy per-index frequency is uniform over 10k draws") {
  GridGeometry g = grid(1, 4, 4);  // N=16
  const int draws = 10000;
  std::vector<i64> hits(16, 0);
  for (int d = 0; d < draws; ++d) {
    auto vis = sample_mask(g, MaskStrategy::Random, 0.5, static_cast<u64>(d));
    for (size_t i = 0; i < vis.size(); ++i)
      if (!vis[i]) ++hits[i];
  }
  for (i64 h : hits) {
    double freq = static_cast<double>(h) / draws;
    CHECK(freq == doctest::Approx(0.5).epsilon(0.04));  // 0.5 +- 0.02
    CHECK(std::fabs(freq - 0.5) <= 0.02);
  }
}

TEST_CASE("select/scatter round-trip restores visible tokens") {
  GridGeometry g = grid(2, 2, 2);
  MaskConfig cfg;
  cfg.rgb_strategy = MaskStrategy::Random;
  cfg.rgb_ratio = 0.5;
  cfg.depth_strategy = MaskStrategy::Random;
  cfg.depth_ratio = 0.25;
  for (u64 seed = 0; seed < 20; ++seed) {
    MaskPlan plan = make_plan(g, cfg, seed);
    Mat tokens = testutil::random_mat(2 * g.tokens(), 5, seed + 100);  // batch of 2
    TokenSelection sel = selection_for(plan, Modality::Rgb, 2);
    Tape t;
    Var full = t.input(tokens);
    Var vis = select_visible(t, full, sel);
    CHECK(t.value(vis).rows == 2 * sel.per_sample);
    Var back = t.scatter_rows(vis, sel.row_map, 2 * g.tokens());
    const Mat& restored = t.value(back);
    for (i64 i : sel.row_map)
      for (i64 j = 0; j < 5; ++j) CHECK(restored.at(i, j) == tokens.at(i, j));
  }
}

TEST_CASE("all-visible plan selection is the identity; singleton keeps one row") {
  GridGeometry g = grid(1, 2, 2);
  MaskPlan all = all_visible_plan(g);
  Mat tokens = testutil::random_mat(g.tokens(), 3, 1);
  Tape t;
  Var out = select_visible(t, t.input(tokens), selection_for(all, Modality::Rgb, 1));
  CHECK(t.value(out).d == tokens.d);

  MaskPlan one = all_visible_plan(g);
  for (size_t i = 0; i < one.visible_rgb.size(); ++i) one.visible_rgb[i] = i == 2 ? 1 : 0;
  Tape t2;
  Var single = select_visible(t2, t2.input(tokens), selection_for(one, Modality::Rgb, 1));
  CHECK(t2.value(single).rows == 1);
  for (i64 j = 0; j < 3; ++j) CHECK(t2.value(single).at(0, j) == tokens.at(2, j));
}

TEST_CASE("chi-square uniformity test does not reject at p=0.01") {
  // N=16, ratio 0.5, 10^4 draws; X^2 = sum (O-E)^2/E over the 16 indices,
  // df=15, critical value chi2(0.99, 15) = 30.5779
  GridGeometry g = grid(1, 4, 4);
  const int draws = 10000;
  std::vector<i64> hits(16, 0);
  for (int d = 0; d < draws; ++d) {
    auto vis = sample_mask(g, MaskStrategy::Random, 0.5, mix_seed(0xc2, static_cast<u64>(d)));
    for (size_t i = 0; i < vis.size(); ++i)
      if (!vis[i]) ++hits[i];
  }
  const double expected = draws * 8.0 / 16.0;
  double x2 = 0;
  for (i64 h : hits) x2 += (h - expected) * (h - expected) / expected;
  CHECK(x2 < 30.5779);
}
