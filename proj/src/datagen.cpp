#include "rgbdmae/datagen.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "rgbdmae/png_io.hpp"
#include "rgbdmae/rng.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace rgbdmae {

namespace {

constexpr u64 kSceneSalt = 0x5ce9e5a1;
constexpr int kMinDim = 32;
constexpr int kDimMultiple = 16;  // default patch size; keeps every sample tokenizable

void check_dims(int h, int w) {
  if (h < kMinDim || w < kMinDim || h % kDimMultiple != 0 || w % kDimMultiple != 0)
    throw DimensionError("scene dimensions must be >= 32 and multiples of 16, got " +
                         std::to_string(h) + "x" + std::to_string(w));
}

double wrap(double v, double extent) {
  double r = std::fmod(v, extent);
  return r < 0 ? r + extent : r;
}

// Membership test with wrap-around so moving objects stay whole. Rectangles
// are half-open ([-rx, rx) around the center) so a lattice-aligned box covers
// exactly 2rx x 2ry pixels and its edges fall on patch borders.
bool inside(const SceneObject& o, double ox, double oy, double px, double py, int h, int w) {
  double dx = px - ox;
  double dy = py - oy;
  dx -= w * std::round(dx / w);
  dy -= h * std::round(dy / h);
  if (o.ellipse) {
    double nx = dx / o.rx, ny = dy / o.ry;
    return nx * nx + ny * ny <= 1.0;
  }
  return dx >= -o.rx && dx < o.rx && dy >= -o.ry && dy < o.ry;
}

// geometry lattice for rectangles; aligning box edges with patch borders
// keeps most patches single-surface
constexpr double kRectLattice = 8.0;

double snap(double v) { return std::round(v / kRectLattice) * kRectLattice; }

void render_frame(const SceneSpec& spec, double frame_idx, double* rgb, double* depth, std::uint8_t* seg) {
  const int h = spec.h, w = spec.w;
  const i64 plane = static_cast<i64>(h) * w;
  // background: diagonal color gradient over a sloped depth plane
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double u = (static_cast<double>(x) / (w - 1) + static_cast<double>(y) / (h - 1)) * 0.5;
      i64 p = static_cast<i64>(y) * w + x;
      for (int c = 0; c < 3; ++c)
        rgb[c * plane + p] = spec.bg_color_a[c] + u * (spec.bg_color_b[c] - spec.bg_color_a[c]);
      depth[p] = spec.bg_depth_near + u * (spec.bg_depth_far - spec.bg_depth_near);
      if (seg) seg[p] = 0;
    }
  }
  // painter's algorithm: far objects first, nearer ones overwrite
  std::vector<const SceneObject*> order;
  order.reserve(spec.objects.size());
  for (const auto& o : spec.objects) order.push_back(&o);
  std::sort(order.begin(), order.end(),
            [](const SceneObject* a, const SceneObject* b) { return a->depth > b->depth; });
  for (const SceneObject* o : order) {
    double ox = wrap(o->cx + o->vx * frame_idx, w);
    double oy = wrap(o->cy + o->vy * frame_idx, h);
    int x0 = static_cast<int>(std::floor(ox - o->rx)) - 1, x1 = static_cast<int>(std::ceil(ox + o->rx)) + 1;
    int y0 = static_cast<int>(std::floor(oy - o->ry)) - 1, y1 = static_cast<int>(std::ceil(oy + o->ry)) + 1;
    for (int y = y0; y <= y1; ++y) {
      int yy = static_cast<int>(wrap(y, h));
      for (int x = x0; x <= x1; ++x) {
        int xx = static_cast<int>(wrap(x, w));
        if (!inside(*o, ox, oy, xx, yy, h, w)) continue;
        i64 p = static_cast<i64>(yy) * w + xx;
        for (int c = 0; c < 3; ++c) rgb[c * plane + p] = o->color[c];
        depth[p] = o->depth;
        if (seg) seg[p] = o->ellipse ? 2 : 1;
      }
    }
  }
}

}  // namespace

void RgbDepthSample::validate() const {
  if (h <= 0 || w <= 0) throw DimensionError("sample with empty dimensions");
  if (rgb.size() != static_cast<size_t>(3) * h * w || depth.size() != static_cast<size_t>(h) * w)
    throw DimensionError("rgb/depth buffer sizes inconsistent with " + std::to_string(h) + "x" + std::to_string(w));
  for (double v : rgb)
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError("rgb value outside [0,1]");
  for (double v : depth)
    if (!std::isfinite(v) || v < 0.0) throw ValidationError("depth value negative or non-finite");
}

void VideoSample::validate() const {
  if (t <= 0 || t % 2 != 0) throw DimensionError("clip length must be positive and even, got " + std::to_string(t));
  if (rgb.size() != static_cast<size_t>(t) * 3 * h * w || depth.size() != static_cast<size_t>(t) * h * w)
    throw DimensionError("clip buffer sizes inconsistent");
}

SceneSpec sample_scene_spec(u64 seed, int h, int w) {
  check_dims(h, w);
  Rng rng(mix_seed(seed, kSceneSalt));
  SceneSpec spec;
  spec.h = h;
  spec.w = w;
  // strong fixed-orientation background gradients: per-channel deltas stay
  // well above the 8-bit quantization step and share a sign, so the
  // patch-normalized background pattern is stable across scenes
  for (int c = 0; c < 3; ++c) {
    spec.bg_color_a[c] = rng.uniform(0.05, 0.35);
    spec.bg_color_b[c] = spec.bg_color_a[c] + rng.uniform(0.35, 0.55);
  }
  spec.bg_depth_near = rng.uniform(6.0, 6.4);
  spec.bg_depth_far = spec.bg_depth_near + rng.uniform(1.4, kMaxDepth - 6.4);

  int count = static_cast<int>(rng.range(2, 7));  // 2..6 objects
  double dim = std::min(h, w);
  // distinct depths, all nearer than the background
  std::vector<double> depths;
  for (int i = 0; i < count; ++i) depths.push_back(rng.uniform(kMinDepth, 5.5));
  std::sort(depths.begin(), depths.end());
  for (int i = 0; i < count; ++i) {
    SceneObject o;
    o.ellipse = rng.uniform() < 0.25;
    o.cx = rng.uniform(0.0, w);
    o.cy = rng.uniform(0.0, h);
    o.rx = rng.uniform(0.10, 0.20) * dim;
    o.ry = rng.uniform(0.10, 0.20) * dim;
    if (!o.ellipse) {
      o.cx = snap(o.cx);
      o.cy = snap(o.cy);
      o.rx = std::max(kRectLattice, snap(o.rx));
      o.ry = std::max(kRectLattice, snap(o.ry));
    }
    for (int c = 0; c < 3; ++c) o.color[c] = rng.uniform(0.5, 1.0);
    o.depth = depths[static_cast<size_t>(i)];
    spec.objects.push_back(o);
  }
  // coherent scene motion: a shared direction plus per-object jitter keeps
  // every object at a constant velocity while the dominant direction stays
  // well defined for the classification label
  double ang = rng.uniform(0.0, 2.0 * M_PI);
  double speed = rng.uniform(2.0, 4.0);
  for (auto& o : spec.objects) {
    o.vx = speed * std::cos(ang) + rng.uniform(-0.5, 0.5);
    o.vy = speed * std::sin(ang) + rng.uniform(-0.5, 0.5);
  }
  return spec;
}

RgbDepthSample render_scene(const SceneSpec& spec) {
  RgbDepthSample s;
  s.h = spec.h;
  s.w = spec.w;
  s.rgb.assign(static_cast<size_t>(3) * spec.h * spec.w, 0.0);
  s.depth.assign(static_cast<size_t>(spec.h) * spec.w, 0.0);
  s.seg.assign(static_cast<size_t>(spec.h) * spec.w, 0);
  render_frame(spec, 0.0, s.rgb.data(), s.depth.data(), s.seg.data());
  s.label = static_cast<int>(spec.objects.size()) - 2;  // 0..4: object-count class
  return s;
}

VideoSample render_clip(const SceneSpec& spec, int t) {
  if (t <= 0 || t % 2 != 0) throw DimensionError("clip length must be positive and even, got " + std::to_string(t));
  VideoSample v;
  v.t = t;
  v.h = spec.h;
  v.w = spec.w;
  v.rgb.assign(static_cast<size_t>(t) * 3 * spec.h * spec.w, 0.0);
  v.depth.assign(static_cast<size_t>(t) * spec.h * spec.w, 0.0);
  const i64 plane = static_cast<i64>(spec.h) * spec.w;
  for (int f = 0; f < t; ++f)
    render_frame(spec, static_cast<double>(f), v.rgb.data() + static_cast<i64>(f) * 3 * plane,
                 v.depth.data() + static_cast<i64>(f) * plane, nullptr);
  v.label = motion_label(spec);
  return v;
}

int motion_label(const SceneSpec& spec) {
  double mx = 0, my = 0;
  for (const auto& o : spec.objects) {
    mx += o.vx;
    my += o.vy;
  }
  if (!spec.objects.empty()) {
    mx /= static_cast<double>(spec.objects.size());
    my /= static_cast<double>(spec.objects.size());
  }
  // image rows grow downward, so "north" is -y
  double ang = std::atan2(-my, mx);  // [-pi, pi]
  double sector = ang / (2.0 * M_PI / kMotionClasses);
  int cls = static_cast<int>(std::llround(sector));
  return (cls % kMotionClasses + kMotionClasses) % kMotionClasses;
}

RgbDepthSample synth_scene(u64 seed, int h, int w) { return render_scene(sample_scene_spec(seed, h, w)); }

VideoSample synth_clip(u64 seed, int t, int h, int w) {
  if (t <= 0 || t % 2 != 0) throw DimensionError("clip length must be positive and even, got " + std::to_string(t));
  return render_clip(sample_scene_spec(seed, h, w), t);
}

DepthNorm depth_norm_params(const std::vector<double>& depth) {
  if (depth.empty()) throw ValidationError("depth_norm_params on empty buffer");
  double lo = depth[0], hi = depth[0];
  for (double v : depth) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  DepthNorm n;
  n.min = lo;
  n.range = std::max(hi - lo, 1e-6);
  return n;
}

std::vector<double> normalize_depth(const std::vector<double>& depth, const DepthNorm& n) {
  std::vector<double> out(depth.size());
  for (size_t i = 0; i < depth.size(); ++i) out[i] = (depth[i] - n.min) / n.range;
  return out;
}

namespace {

PngImage rgb_to_png(const double* rgb, int h, int w) {
  PngImage img;
  img.width = w;
  img.height = h;
  img.channels = 3;
  img.bit_depth = 8;
  img.samples.resize(img.sample_count());
  const i64 plane = static_cast<i64>(h) * w;
  size_t si = 0;
  for (i64 p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c)
      img.samples[si++] = static_cast<std::uint16_t>(std::llround(std::clamp(rgb[c * plane + p], 0.0, 1.0) * 255.0));
  return img;
}

PngImage depth_to_png(const double* depth, int h, int w, double scale) {
  PngImage img;
  img.width = w;
  img.height = h;
  img.channels = 1;
  img.bit_depth = 16;
  img.samples.resize(img.sample_count());
  for (i64 p = 0; p < static_cast<i64>(h) * w; ++p) {
    double mm = std::clamp(depth[p] * scale, 0.0, 65535.0);
    img.samples[static_cast<size_t>(p)] = static_cast<std::uint16_t>(std::llround(mm));
  }
  return img;
}

std::string frame_name(int f) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d.png", f);
  return buf;
}

std::string id_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06d", i);
  return buf;
}

void write_manifest(const std::string& root, const DatasetManifest& m) {
  json j;
  j["kind"] = m.video ? "video" : "image";
  j["depth_scale"] = m.depth_scale;
  j["depth_clamp_max"] = m.depth_clamp_max;
  if (m.video) j["frames"] = m.frames;
  json recs = json::array();
  for (const auto& r : m.records) {
    json rec;
    rec["id"] = r.id;
    rec["rgb"] = r.rgb_path;
    rec["depth"] = r.depth_path;
    if (!r.seg_path.empty()) rec["seg"] = r.seg_path;
    if (r.label) rec["label"] = *r.label;
    recs.push_back(rec);
  }
  j["records"] = recs;
  std::ofstream out(root + "/manifest.json");
  if (!out) throw IoError("cannot write manifest under " + root);
  out << j.dump(2) << "\n";
}

}  // namespace

void write_image_dataset(const std::string& root, int n, u64 seed, int h, int w) {
  fs::create_directories(fs::path(root) / "rgb");
  fs::create_directories(fs::path(root) / "depth");
  fs::create_directories(fs::path(root) / "seg");
  DatasetManifest m;
  m.root = root;
  m.video = false;
  for (int i = 0; i < n; ++i) {
    RgbDepthSample s = synth_scene(mix_seed(seed, static_cast<u64>(i)), h, w);
    DatasetRecord r;
    r.id = id_name(i);
    r.rgb_path = "rgb/" + r.id + ".png";
    r.depth_path = "depth/" + r.id + ".png";
    r.seg_path = "seg/" + r.id + ".png";
    r.label = s.label;
    write_png(root + "/" + r.rgb_path, rgb_to_png(s.rgb.data(), h, w));
    write_png(root + "/" + r.depth_path, depth_to_png(s.depth.data(), h, w, m.depth_scale));
    PngImage seg;
    seg.width = w;
    seg.height = h;
    seg.channels = 1;
    seg.bit_depth = 8;
    seg.samples.assign(s.seg.begin(), s.seg.end());
    write_png(root + "/" + r.seg_path, seg);
    m.records.push_back(std::move(r));
  }
  write_manifest(root, m);
}

void write_video_dataset(const std::string& root, int n, u64 seed, int t, int h, int w) {
  DatasetManifest m;
  m.root = root;
  m.video = true;
  m.frames = t;
  for (int i = 0; i < n; ++i) {
    VideoSample v = synth_clip(mix_seed(seed, static_cast<u64>(i)), t, h, w);
    DatasetRecord r;
    r.id = id_name(i);
    r.rgb_path = "rgb/" + r.id;
    r.depth_path = "depth/" + r.id;
    r.label = v.label;
    fs::create_directories(fs::path(root) / r.rgb_path);
    fs::create_directories(fs::path(root) / r.depth_path);
    const i64 plane = static_cast<i64>(h) * w;
    for (int f = 0; f < t; ++f) {
      write_png(root + "/" + r.rgb_path + "/" + frame_name(f),
                rgb_to_png(v.rgb.data() + static_cast<i64>(f) * 3 * plane, h, w));
      write_png(root + "/" + r.depth_path + "/" + frame_name(f),
                depth_to_png(v.depth.data() + static_cast<i64>(f) * plane, h, w, m.depth_scale));
    }
    m.records.push_back(std::move(r));
  }
  write_manifest(root, m);
}

DatasetManifest load_dataset(const std::string& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open manifest: " + manifest_path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("manifest " + manifest_path + " does not parse: " + e.what());
  }
  DatasetManifest m;
  m.root = fs::path(manifest_path).parent_path().string();
  if (m.root.empty()) m.root = ".";
  std::string kind = j.value("kind", "image");
  if (kind != "image" && kind != "video") throw ValidationError("manifest " + manifest_path + ": unknown kind " + kind);
  m.video = kind == "video";
  m.depth_scale = j.value("depth_scale", 1000.0);
  m.depth_clamp_max = j.value("depth_clamp_max", kMaxDepth);
  m.frames = j.value("frames", 0);
  if (m.video && (m.frames <= 0 || m.frames % 2 != 0))
    throw ValidationError("manifest " + manifest_path + ": video manifests need an even positive 'frames'");
  if (!j.contains("records")) throw ValidationError("manifest " + manifest_path + ": missing records");
  for (const auto& rec : j["records"]) {
    DatasetRecord r;
    r.id = rec.value("id", "");
    r.rgb_path = rec.at("rgb").get<std::string>();
    r.depth_path = rec.at("depth").get<std::string>();
    r.seg_path = rec.value("seg", "");
    if (rec.contains("label")) r.label = rec["label"].get<int>();
    if (r.id.empty()) r.id = r.rgb_path;
    m.records.push_back(std::move(r));
  }
  return m;
}

namespace {

PngImage read_record_png(const DatasetManifest& m, const std::string& rel, const std::string& record_id) {
  std::string path = m.root + "/" + rel;
  if (!fs::exists(path)) throw IoError("record " + record_id + ": missing file " + path);
  return read_png(path);
}

void fill_rgb(const PngImage& img, double* rgb, const std::string& record_id) {
  if (img.channels != 3 || img.bit_depth != 8)
    throw ValidationError("record " + record_id + ": rgb raster must be 8-bit 3-channel");
  const i64 plane = static_cast<i64>(img.height) * img.width;
  size_t si = 0;
  for (i64 p = 0; p < plane; ++p)
    for (int c = 0; c < 3; ++c) rgb[c * plane + p] = static_cast<double>(img.samples[si++]) / 255.0;
}

void fill_depth(const PngImage& img, double* depth, double scale, double clamp_max, const std::string& record_id) {
  if (img.channels != 1 || img.bit_depth != 16)
    throw ValidationError("record " + record_id + ": depth raster must be 16-bit single-channel");
  for (i64 p = 0; p < static_cast<i64>(img.height) * img.width; ++p)
    depth[p] = std::min(static_cast<double>(img.samples[static_cast<size_t>(p)]) / scale, clamp_max);
}

}  // namespace

RgbDepthSample load_image_sample(const DatasetManifest& m, size_t index) {
  if (m.video) throw ValidationError("load_image_sample on a video manifest");
  if (index >= m.records.size()) throw ValidationError("sample index out of range");
  const DatasetRecord& r = m.records[index];
  PngImage rgb = read_record_png(m, r.rgb_path, r.id);
  PngImage dep = read_record_png(m, r.depth_path, r.id);
  if (rgb.width != dep.width || rgb.height != dep.height)
    throw ValidationError("record " + r.id + ": rgb " + std::to_string(rgb.width) + "x" + std::to_string(rgb.height) +
                          " and depth " + std::to_string(dep.width) + "x" + std::to_string(dep.height) +
                          " resolutions differ");
  RgbDepthSample s;
  s.h = rgb.height;
  s.w = rgb.width;
  s.rgb.resize(static_cast<size_t>(3) * s.h * s.w);
  s.depth.resize(static_cast<size_t>(s.h) * s.w);
  fill_rgb(rgb, s.rgb.data(), r.id);
  fill_depth(dep, s.depth.data(), m.depth_scale, m.depth_clamp_max, r.id);
  s.label = r.label;
  if (!r.seg_path.empty()) {
    PngImage seg = read_record_png(m, r.seg_path, r.id);
    if (seg.width != s.w || seg.height != s.h)
      throw ValidationError("record " + r.id + ": seg resolution differs from rgb");
    s.seg.assign(seg.samples.begin(), seg.samples.end());
  }
  return s;
}

VideoSample load_video_sample(const DatasetManifest& m, size_t index) {
  if (!m.video) throw ValidationError("load_video_sample on an image manifest");
  if (index >= m.records.size()) throw ValidationError("sample index out of range");
  const DatasetRecord& r = m.records[index];
  VideoSample v;
  v.t = m.frames;
  for (int f = 0; f < m.frames; ++f) {
    PngImage rgb = read_record_png(m, r.rgb_path + "/" + frame_name(f), r.id);
    PngImage dep = read_record_png(m, r.depth_path + "/" + frame_name(f), r.id);
    if (rgb.width != dep.width || rgb.height != dep.height)
      throw ValidationError("record " + r.id + " frame " + std::to_string(f) + ": rgb and depth resolutions differ");
    if (f == 0) {
      v.h = rgb.height;
      v.w = rgb.width;
      v.rgb.resize(static_cast<size_t>(m.frames) * 3 * v.h * v.w);
      v.depth.resize(static_cast<size_t>(m.frames) * v.h * v.w);
    } else if (rgb.height != v.h || rgb.width != v.w) {
      throw ValidationError("record " + r.id + " frame " + std::to_string(f) + ": resolution differs from frame 0");
    }
    const i64 plane = static_cast<i64>(v.h) * v.w;
    fill_rgb(rgb, v.rgb.data() + static_cast<i64>(f) * 3 * plane, r.id);
    fill_depth(dep, v.depth.data() + static_cast<i64>(f) * plane, m.depth_scale, m.depth_clamp_max, r.id);
  }
  v.label = r.label;
  return v;
}

}  // namespace rgbdmae
