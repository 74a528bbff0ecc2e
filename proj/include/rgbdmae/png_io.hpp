#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "rgbdmae/common.hpp"

namespace rgbdmae {

// Minimal PNG support for the dataset layout: 8-bit RGB, 8-bit gray and
// 16-bit gray, non-interlaced. 16-bit samples are big-endian per the spec.
struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 1;   // 1 or 3
  int bit_depth = 8;  // 8 or 16
  // Row-major, channel-interleaved. 16-bit images use one uint16 per sample.
  std::vector<std::uint16_t> samples;

  size_t sample_count() const { return static_cast<size_t>(width) * height * channels; }
};

PngImage read_png(const std::string& path);
void write_png(const std::string& path, const PngImage& img);

}  // namespace rgbdmae
