#pragma once

#include "rgbdmae/autograd.hpp"
#include "rgbdmae/datagen.hpp"
#include "rgbdmae/mat.hpp"

namespace rgbdmae {

// Token grid for one sample. Token order is the documented bijection
// index = (t * n_h + h) * n_w + w  (t-major, then rows, then columns);
// masking and the losses rely on it.
struct GridGeometry {
  int n_t = 1;
  int n_h = 0;
  int n_w = 0;
  int patch = 16;
  int tubelet = 1;  // frames per token; 1 for images

  i64 tokens() const { return static_cast<i64>(n_t) * n_h * n_w; }
  i64 spatial_cells() const { return static_cast<i64>(n_h) * n_w; }
  i64 token_index(int t, int h, int w) const { return (static_cast<i64>(t) * n_h + h) * n_w + w; }

  bool operator==(const GridGeometry&) const = default;
};

GridGeometry image_geometry(int h, int w, int patch);
GridGeometry video_geometry(int t, int h, int w, int patch, int tubelet);

// Patch rows are laid out [frame-in-tubelet][channel][py][px]; length
// tubelet * patch^2 * channels. patchify/tubify have exact inverses.
Mat patchify_image(const double* chw, int channels, int h, int w, int patch);
void unpatchify_image(const Mat& patches, int channels, int h, int w, int patch, double* chw);
Mat tubify_clip(const double* tchw, int channels, int t, int h, int w, int patch, int tubelet);
void untubify_clip(const Mat& patches, int channels, int t, int h, int w, int patch, int tubelet, double* tchw);

// Convenience wrappers over the sample types.
Mat patchify(const RgbDepthSample& s, int patch, Modality m);
Mat tubify(const VideoSample& v, int patch, int tubelet, Modality m);

inline i64 patch_dim(const GridGeometry& g, Modality m) {
  return static_cast<i64>(g.tubelet) * g.patch * g.patch * (m == Modality::Rgb ? 3 : 1);
}

// Parameter-free sine-cosine positional table, (N, dim). Images split the
// width in half between the two axes (dim % 4 == 0); videos use the
// (dim/4, 3dim/8, 3dim/8) split rounded down to even, remainder zero-filled.
Mat positional_embedding(const GridGeometry& geom, i64 dim);

// Plain affine projection (weight: in_dim x D, bias: 1 x D).
Mat project(const Mat& raw_patches, const Mat& weight, const Mat& bias);
// Tape variant used inside the model graph.
Var project(Tape& tape, Var raw_patches, Var weight, Var bias);

}  // namespace rgbdmae
