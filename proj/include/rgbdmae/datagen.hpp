#pragma once

#include <optional>
#include <string>
#include <vector>

#include "rgbdmae/common.hpp"

namespace rgbdmae {

// Paired RGB-D frame. rgb is CHW in [0,1], depth is HW in meters.
struct RgbDepthSample {
  int h = 0, w = 0;
  std::vector<double> rgb;    // 3*h*w
  std::vector<double> depth;  // h*w
  std::optional<int> label;
  std::vector<std::uint8_t> seg;  // h*w class ids (0 bg, 1 rect, 2 ellipse); empty if absent

  void validate() const;
};

struct VideoSample {
  int t = 0, h = 0, w = 0;
  std::vector<double> rgb;    // t*3*h*w
  std::vector<double> depth;  // t*h*w
  std::optional<int> label;

  void validate() const;
};

// Scene parameterization, exposed so tests can derive oracles (motion labels,
// depth ranges) directly from the generator inputs.
struct SceneObject {
  bool ellipse = false;
  double cx = 0, cy = 0;  // center, pixels
  double rx = 0, ry = 0;  // half extents, pixels
  double color[3] = {0, 0, 0};
  double depth = 1.0;   // meters
  double vx = 0, vy = 0;  // pixels per frame
};

struct SceneSpec {
  int h = 0, w = 0;
  double bg_color_a[3] = {0, 0, 0};
  double bg_color_b[3] = {0, 0, 0};
  double bg_depth_near = 6.0, bg_depth_far = 8.0;
  std::vector<SceneObject> objects;
};

inline constexpr int kMotionClasses = 8;
inline constexpr double kMinDepth = 0.5;
inline constexpr double kMaxDepth = 8.0;

SceneSpec sample_scene_spec(u64 seed, int h, int w);
RgbDepthSample render_scene(const SceneSpec& spec);
VideoSample render_clip(const SceneSpec& spec, int t);
// Dominant motion direction: mean object velocity quantized to 8 compass
// classes, 0=E,1=NE,...,7=SE ("north" is up, i.e. decreasing row index).
int motion_label(const SceneSpec& spec);

RgbDepthSample synth_scene(u64 seed, int h, int w);
VideoSample synth_clip(u64 seed, int t, int h, int w);

// Per-sample min-max depth normalization used before tokenization.
struct DepthNorm {
  double min = 0.0;
  double range = 1.0;
};
DepthNorm depth_norm_params(const std::vector<double>& depth);
std::vector<double> normalize_depth(const std::vector<double>& depth, const DepthNorm& n);

// On-disk dataset: root/manifest.json, root/rgb/<id>.png, root/depth/<id>.png
// (16-bit millimeters); videos store frames as root/rgb/<id>/<frame:05d>.png.
struct DatasetRecord {
  std::string id;
  std::string rgb_path;    // relative to root
  std::string depth_path;  // relative to root
  std::string seg_path;    // optional, relative to root
  std::optional<int> label;
};

struct DatasetManifest {
  std::string root;
  bool video = false;
  int frames = 0;  // per clip, video only
  double depth_scale = 1000.0;  // raw units per meter
  double depth_clamp_max = kMaxDepth;
  std::vector<DatasetRecord> records;

  size_t size() const { return records.size(); }
};

void write_image_dataset(const std::string& root, int n, u64 seed, int h, int w);
void write_video_dataset(const std::string& root, int n, u64 seed, int t, int h, int w);

DatasetManifest load_dataset(const std::string& manifest_path);
RgbDepthSample load_image_sample(const DatasetManifest& m, size_t index);
VideoSample load_video_sample(const DatasetManifest& m, size_t index);

}  // namespace rgbdmae
