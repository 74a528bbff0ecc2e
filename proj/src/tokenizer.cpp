#include "rgbdmae/tokenizer.hpp"

#include <cmath>

namespace rgbdmae {

GridGeometry image_geometry(int h, int w, int patch) {
  if (patch <= 0 || h % patch != 0 || w % patch != 0)
    throw DimensionError("image " + std::to_string(h) + "x" + std::to_string(w) +
                         " not divisible by patch " + std::to_string(patch));
  GridGeometry g;
  g.n_t = 1;
  g.n_h = h / patch;
  g.n_w = w / patch;
  g.patch = patch;
  g.tubelet = 1;
  return g;
}

GridGeometry video_geometry(int t, int h, int w, int patch, int tubelet) {
  if (tubelet <= 0 || t % tubelet != 0)
    throw DimensionError("clip length " + std::to_string(t) + " not divisible by tubelet " + std::to_string(tubelet));
  GridGeometry g = image_geometry(h, w, patch);
  g.n_t = t / tubelet;
  g.tubelet = tubelet;
  return g;
}

Mat tubify_clip(const double* tchw, int channels, int t, int h, int w, int patch, int tubelet) {
  GridGeometry g = video_geometry(t, h, w, patch, tubelet);
  const i64 in_dim = static_cast<i64>(tubelet) * channels * patch * patch;
  Mat out(g.tokens(), in_dim);
  const i64 plane = static_cast<i64>(h) * w;
  for (int ti = 0; ti < g.n_t; ++ti)
    for (int hi = 0; hi < g.n_h; ++hi)
      for (int wi = 0; wi < g.n_w; ++wi) {
        double* row = out.row(g.token_index(ti, hi, wi));
        i64 k = 0;
        for (int lt = 0; lt < tubelet; ++lt) {
          const double* frame = tchw + (static_cast<i64>(ti) * tubelet + lt) * channels * plane;
          for (int c = 0; c < channels; ++c)
            for (int py = 0; py < patch; ++py)
              for (int px = 0; px < patch; ++px)
                row[k++] = frame[c * plane + static_cast<i64>(hi * patch + py) * w + (wi * patch + px)];
        }
      }
  return out;
}

void untubify_clip(const Mat& patches, int channels, int t, int h, int w, int patch, int tubelet, double* tchw) {
  GridGeometry g = video_geometry(t, h, w, patch, tubelet);
  const i64 in_dim = static_cast<i64>(tubelet) * channels * patch * patch;
  if (patches.rows != g.tokens() || patches.cols != in_dim)
    throw DimensionError("untubify: patch matrix " + patches.shape_str() + " inconsistent with geometry");
  const i64 plane = static_cast<i64>(h) * w;
  for (int ti = 0; ti < g.n_t; ++ti)
    for (int hi = 0; hi < g.n_h; ++hi)
      for (int wi = 0; wi < g.n_w; ++wi) {
        const double* row = patches.row(g.token_index(ti, hi, wi));
        i64 k = 0;
        for (int lt = 0; lt < tubelet; ++lt) {
          double* frame = tchw + (static_cast<i64>(ti) * tubelet + lt) * channels * plane;
          for (int c = 0; c < channels; ++c)
            for (int py = 0; py < patch; ++py)
              for (int px = 0; px < patch; ++px)
                frame[c * plane + static_cast<i64>(hi * patch + py) * w + (wi * patch + px)] = row[k++];
        }
      }
}

Mat patchify_image(const double* chw, int channels, int h, int w, int patch) {
  return tubify_clip(chw, channels, 1, h, w, patch, 1);
}

void unpatchify_image(const Mat& patches, int channels, int h, int w, int patch, double* chw) {
  untubify_clip(patches, channels, 1, h, w, patch, 1, chw);
}

Mat patchify(const RgbDepthSample& s, int patch, Modality m) {
  return m == Modality::Rgb ? patchify_image(s.rgb.data(), 3, s.h, s.w, patch)
                            : patchify_image(s.depth.data(), 1, s.h, s.w, patch);
}

Mat tubify(const VideoSample& v, int patch, int tubelet, Modality m) {
  return m == Modality::Rgb ? tubify_clip(v.rgb.data(), 3, v.t, v.h, v.w, patch, tubelet)
                            : tubify_clip(v.depth.data(), 1, v.t, v.h, v.w, patch, tubelet);
}

namespace {

// 1D table, MAE convention: first half sin(pos * w_i), second half cos.
// w_i = 1 / 10000^(2i/dim)
void fill_axis(double* row, i64 dim, double pos) {
  i64 half = dim / 2;
  for (i64 i = 0; i < half; ++i) {
    double omega = 1.0 / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(dim));
    row[i] = std::sin(pos * omega);
    row[half + i] = std::cos(pos * omega);
  }
}

i64 even_floor(i64 x) { return x - (x % 2); }

}  // namespace

Mat positional_embedding(const GridGeometry& geom, i64 dim) {
  i64 dt = 0, dh = 0, dw = 0;
  if (geom.n_t == 1) {
    if (dim < 4 || dim % 4 != 0)
      throw ConfigError("image positional embedding needs width divisible by 4, got " + std::to_string(dim));
    dh = dw = dim / 2;
  } else {
    dt = even_floor(dim / 4);
    dh = dw = even_floor(3 * dim / 8);
    if (dt < 2 || dh < 2)
      throw ConfigError("video positional embedding needs width >= 8, got " + std::to_string(dim));
  }
  Mat table(geom.tokens(), dim);
  for (int ti = 0; ti < geom.n_t; ++ti)
    for (int hi = 0; hi < geom.n_h; ++hi)
      for (int wi = 0; wi < geom.n_w; ++wi) {
        double* row = table.row(geom.token_index(ti, hi, wi));
        i64 off = 0;
        if (dt > 0) {
          fill_axis(row + off, dt, static_cast<double>(ti));
          off += dt;
        }
        fill_axis(row + off, dh, static_cast<double>(hi));
        off += dh;
        fill_axis(row + off, dw, static_cast<double>(wi));
        // remainder columns stay zero
      }
  return table;
}

Mat project(const Mat& raw_patches, const Mat& weight, const Mat& bias) {
  if (raw_patches.cols != weight.rows || bias.rows != 1 || bias.cols != weight.cols)
    throw DimensionError("project: patches " + raw_patches.shape_str() + " weight " + weight.shape_str() +
                         " bias " + bias.shape_str());
  Mat out = mm_nn(raw_patches, weight);
  for (i64 r = 0; r < out.rows; ++r)
    for (i64 j = 0; j < out.cols; ++j) out.at(r, j) += bias.d[static_cast<size_t>(j)];
  return out;
}

Var project(Tape& tape, Var raw_patches, Var weight, Var bias) {
  if (tape.value(raw_patches).cols != tape.value(weight).rows)
    throw DimensionError("project: patches " + tape.value(raw_patches).shape_str() + " vs weight " +
                         tape.value(weight).shape_str());
  return tape.add_rowvec(tape.matmul(raw_patches, weight), bias);
}

}  // namespace rgbdmae
