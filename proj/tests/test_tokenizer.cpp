#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "rgbdmae/datagen.hpp"
#include "rgbdmae/tokenizer.hpp"
#include "test_util.hpp"

using namespace rgbdmae;
using testutil::random_mat;

TEST_CASE("patch counts and row lengths match the grid arithmetic") {
  RgbDepthSample s = synth_scene(1, 224, 224);
  Mat p = patchify(s, 16, Modality::Rgb);
  CHECK(p.rows == 196);  // (224/16)^2
  CHECK(p.cols == 768);  // 16*16*3

  VideoSample v = synth_clip(2, 16, 224, 224);
  Mat tub = tubify(v, 16, 2, Modality::Depth);
  CHECK(tub.rows == 8 * 14 * 14);
  CHECK(tub.cols == 512);  // 2*16*16*1
}

TEST_CASE("unpatchify inverts patchify exactly") {
  RgbDepthSample s = synth_scene(3, 64, 64);
  Mat p = patchify(s, 16, Modality::Rgb);
  std::vector<double> back(s.rgb.size());
  unpatchify_image(p, 3, 64, 64, 16, back.data());
  CHECK(back == s.rgb);

  VideoSample v = synth_clip(4, 8, 32, 32);
  Mat tub = tubify(v, 16, 2, Modality::Rgb);
  std::vector<double> vb(v.rgb.size());
  untubify_clip(tub, 3, 8, 32, 32, 16, 2, vb.data());
  CHECK(vb == v.rgb);
}

TEST_CASE("indivisible dimensions raise a dimension error") {
  CHECK_THROWS_AS(image_geometry(60, 64, 16), DimensionError);
  CHECK_THROWS_AS(video_geometry(5, 64, 64, 16, 2), DimensionError);
}

TEST_CASE("token ordering is t-major, then rows, then columns") {
  GridGeometry g = video_geometry(4, 64, 32, 16, 2);
  CHECK(g.n_t == 2);
  CHECK(g.n_h == 4);
  CHECK(g.n_w == 2);
  CHECK(g.token_index(0, 0, 0) == 0);
  CHECK(g.token_index(0, 0, 1) == 1);
  CHECK(g.token_index(0, 1, 0) == 2);
  CHECK(g.token_index(1, 0, 0) == 8);
  CHECK(g.tokens() == 16);
}

TEST_CASE("projection is affine with the degenerate cases of the contract") {
  Mat raw = random_mat(5, 12, 10);
  Mat zero_w(12, 4);
  Mat bias(1, 4);
  bias.d = {1.0, -2.0, 0.5, 3.0};
  Mat out = project(raw, zero_w, bias);
  for (i64 r = 0; r < out.rows; ++r)
    for (i64 j = 0; j < 4; ++j) CHECK(out.at(r, j) == doctest::Approx(bias.d[static_cast<size_t>(j)]));

  Mat eye(12, 12);
  for (i64 i = 0; i < 12; ++i) eye.at(i, i) = 1.0;
  Mat id_out = project(raw, eye, Mat(1, 12));
  for (i64 i = 0; i < raw.numel(); ++i) CHECK(id_out.d[static_cast<size_t>(i)] == doctest::Approx(raw.d[static_cast<size_t>(i)]));
}

TEST_CASE("projection is linear in its input (bias zero)") {
  Mat w = random_mat(8, 6, 20);
  Mat zero_bias(1, 6);
  Mat x = random_mat(4, 8, 21), y = random_mat(4, 8, 22);
  double a = 1.7, b = -0.4;
  Mat combo(4, 8);
  for (i64 i = 0; i < combo.numel(); ++i)
    combo.d[static_cast<size_t>(i)] = a * x.d[static_cast<size_t>(i)] + b * y.d[static_cast<size_t>(i)];
  Mat lhs = project(combo, w, zero_bias);
  Mat px = project(x, w, zero_bias), py = project(y, w, zero_bias);
  for (i64 i = 0; i < lhs.numel(); ++i)
    CHECK(lhs.d[static_cast<size_t>(i)] ==
          doctest::Approx(a * px.d[static_cast<size_t>(i)] + b * py.d[static_cast<size_t>(i)]).epsilon(1e-9));
}

TEST_CASE("projection gradient matches central finite differences") {
  Param w("w", random_mat(6, 4, 30, 0.5));
  Param b("b", random_mat(1, 4, 31, 0.5));
  Mat raw = random_mat(2, 6, 32);  // 2-token toy case
  Mat lw = random_mat(2, 4, 33);
  auto loss = [&](bool backward) {
    Tape t;
    Var out = project(t, t.input(raw), t.param(w), t.param(b));
    Var l = t.weighted_sum(out, lw);
    if (backward) {
      w.zero_grad();
      b.zero_grad();
      t.backward(l);
    }
    return t.scalar(l);
  };
  // eps = 1e-4, rel tol 1e-3 per the contract
  loss(true);
  Mat analytic_w = w.grad, analytic_b = b.grad;
  for (i64 j = 0; j < w.value.numel(); ++j) {
    double orig = w.value.d[static_cast<size_t>(j)];
    w.value.d[static_cast<size_t>(j)] = orig + 1e-4;
    double hi = loss(false);
    w.value.d[static_cast<size_t>(j)] = orig - 1e-4;
    double lo = loss(false);
    w.value.d[static_cast<size_t>(j)] = orig;
    CHECK(testutil::rel_err(analytic_w.d[static_cast<size_t>(j)], (hi - lo) / 2e-4) < 1e-3);
  }
}

TEST_CASE("positional table: shape, injectivity, zero-frequency sine at origin") {
  GridGeometry g = image_geometry(224, 224, 16);
  Mat table = positional_embedding(g, 768);
  CHECK(table.rows == 196);
  CHECK(table.cols == 768);
  for (i64 a = 0; a < table.rows; ++a)
    for (i64 b = a + 1; b < table.rows; ++b) {
      double diff = 0;
      for (i64 j = 0; j < table.cols; ++j) diff = std::max(diff, std::fabs(table.at(a, j) - table.at(b, j)));
      CHECK(diff > 1e-9);  // pairwise distinct
    }
  // row 0 is position (0,0): every sine column is sin(0) = 0
  CHECK(table.at(0, 0) == doctest::Approx(0.0));
  const i64 half_axis = 768 / 4;
  for (i64 j = 0; j < half_axis; ++j) CHECK(table.at(0, j) == doctest::Approx(0.0));
}

TEST_CASE("adjacent grid positions are more similar than far-apart ones") {
  // brute force over all pairs of an 8x8 grid: every adjacent pair must beat
  // every pair at Chebyshev distance >= 4
  GridGeometry g = image_geometry(128, 128, 16);
  Mat table = positional_embedding(g, 64);
  auto cosine = [&](i64 a, i64 b) {
    double dot = 0, na = 0, nb = 0;
    for (i64 j = 0; j < table.cols; ++j) {
      dot += table.at(a, j) * table.at(b, j);
      na += table.at(a, j) * table.at(a, j);
      nb += table.at(b, j) * table.at(b, j);
    }
    return dot / std::sqrt(na * nb);
  };
  double min_adjacent = 1e9, max_far = -1e9;
  for (int ay = 0; ay < 8; ++ay)
    for (int ax = 0; ax < 8; ++ax)
      for (int by = 0; by < 8; ++by)
        for (int bx = 0; bx < 8; ++bx) {
          if (ay == by && ax == bx) continue;
          i64 a = g.token_index(0, ay, ax), b = g.token_index(0, by, bx);
          int cheb = std::max(std::abs(ay - by), std::abs(ax - bx));
          int manhattan = std::abs(ay - by) + std::abs(ax - bx);
          double c = cosine(a, b);
          if (manhattan == 1) min_adjacent = std::min(min_adjacent, c);
          if (cheb >= 4) max_far = std::max(max_far, c);
        }
  CHECK(min_adjacent > max_far);
}

TEST_CASE("video positional split covers the width and rejects tiny widths") {
  GridGeometry g = video_geometry(8, 64, 64, 16, 2);
  Mat table = positional_embedding(g, 128);
  CHECK(table.rows == g.tokens());
  CHECK(table.cols == 128);
  // distinct temporal slices at the same spatial cell must differ
  double diff = 0;
  i64 a = g.token_index(0, 1, 1), b = g.token_index(2, 1, 1);
  for (i64 j = 0; j < table.cols; ++j) diff = std::max(diff, std::fabs(table.at(a, j) - table.at(b, j)));
  CHECK(diff > 1e-9);
  CHECK_THROWS_AS(positional_embedding(g, 6), ConfigError);
  CHECK_THROWS_AS(positional_embedding(image_geometry(64, 64, 16), 66), ConfigError);
}

TEST_CASE("per-modality projections are independent parameters") {
  // mutating the rgb projection must leave depth tokens untouched
  Mat raw_d = random_mat(4, 16, 40);
  Mat w_rgb = random_mat(48, 8, 41), w_depth = random_mat(16, 8, 42);
  Mat b_rgb(1, 8), b_depth(1, 8);
  Mat before = project(raw_d, w_depth, b_depth);
  for (double& v : w_rgb.d) v += 100.0;
  Mat after = project(raw_d, w_depth, b_depth);
  CHECK(before.d == after.d);
}
