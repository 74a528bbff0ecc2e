#include "rgbdmae/png_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <memory>

namespace rgbdmae {
namespace {

const unsigned char kSignature[8] = {137, 80, 78, 71, 13, 10, 26, 10};

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  out.push_back(static_cast<unsigned char>(v >> 24));
  out.push_back(static_cast<unsigned char>(v >> 16));
  out.push_back(static_cast<unsigned char>(v >> 8));
  out.push_back(static_cast<unsigned char>(v));
}

std::uint32_t get_u32(const unsigned char* p) {
  return (static_cast<std::uint32_t>(p[0]) << 24) | (static_cast<std::uint32_t>(p[1]) << 16) |
         (static_cast<std::uint32_t>(p[2]) << 8) | static_cast<std::uint32_t>(p[3]);
}

void append_chunk(std::vector<unsigned char>& out, const char type[4], const unsigned char* data, size_t len) {
  put_u32(out, static_cast<std::uint32_t>(len));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data, data + len);
  uLong crc = crc32(0L, out.data() + start, static_cast<uInt>(4 + len));
  put_u32(out, static_cast<std::uint32_t>(crc));
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

}  // namespace

void write_png(const std::string& path, const PngImage& img) {
  if (img.width <= 0 || img.height <= 0) throw ValidationError("png write " + path + ": empty image");
  if ((img.channels != 1 && img.channels != 3) || (img.bit_depth != 8 && img.bit_depth != 16))
    throw ValidationError("png write " + path + ": unsupported format");
  if (img.samples.size() != img.sample_count()) throw ValidationError("png write " + path + ": sample count mismatch");

  const int bytes_per_sample = img.bit_depth / 8;
  const size_t stride = static_cast<size_t>(img.width) * img.channels * bytes_per_sample;

  // filter type 0 on every scanline
  std::vector<unsigned char> raw((stride + 1) * static_cast<size_t>(img.height));
  size_t si = 0;
  for (int y = 0; y < img.height; ++y) {
    unsigned char* row = raw.data() + static_cast<size_t>(y) * (stride + 1);
    row[0] = 0;
    unsigned char* p = row + 1;
    for (int x = 0; x < img.width * img.channels; ++x) {
      std::uint16_t v = img.samples[si++];
      if (img.bit_depth == 16) {
        *p++ = static_cast<unsigned char>(v >> 8);
        *p++ = static_cast<unsigned char>(v & 0xff);
      } else {
        *p++ = static_cast<unsigned char>(v & 0xff);
      }
    }
  }

  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<unsigned char> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw IoError("png write " + path + ": deflate failed");
  comp.resize(comp_len);

  std::vector<unsigned char> out;
  out.insert(out.end(), kSignature, kSignature + 8);
  unsigned char ihdr[13];
  ihdr[0] = static_cast<unsigned char>(img.width >> 24);
  ihdr[1] = static_cast<unsigned char>(img.width >> 16);
  ihdr[2] = static_cast<unsigned char>(img.width >> 8);
  ihdr[3] = static_cast<unsigned char>(img.width);
  ihdr[4] = static_cast<unsigned char>(img.height >> 24);
  ihdr[5] = static_cast<unsigned char>(img.height >> 16);
  ihdr[6] = static_cast<unsigned char>(img.height >> 8);
  ihdr[7] = static_cast<unsigned char>(img.height);
  ihdr[8] = static_cast<unsigned char>(img.bit_depth);
  ihdr[9] = static_cast<unsigned char>(img.channels == 3 ? 2 : 0);  // color type
  ihdr[10] = 0;                                                     // compression
  ihdr[11] = 0;                                                     // filter
  ihdr[12] = 0;                                                     // no interlace
  append_chunk(out, "IHDR", ihdr, 13);
  append_chunk(out, "IDAT", comp.data(), comp.size());
  append_chunk(out, "IEND", nullptr, 0);

  std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!f) throw IoError("cannot open for writing: " + path);
  if (std::fwrite(out.data(), 1, out.size(), f.get()) != out.size())
    throw IoError("short write: " + path);
}

PngImage read_png(const std::string& path) {
  std::unique_ptr<std::FILE, int (*)(std::FILE*)> f(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!f) throw IoError("cannot open: " + path);
  std::vector<unsigned char> buf;
  unsigned char tmp[65536];
  size_t n;
  while ((n = std::fread(tmp, 1, sizeof(tmp), f.get())) > 0) buf.insert(buf.end(), tmp, tmp + n);
  if (buf.size() < 8 + 25 || std::memcmp(buf.data(), kSignature, 8) != 0)
    throw IoError("not a png file: " + path);

  PngImage img;
  std::vector<unsigned char> idat;
  size_t pos = 8;
  bool seen_ihdr = false, seen_iend = false;
  int interlace = 0;
  while (pos + 8 <= buf.size() && !seen_iend) {
    std::uint32_t len = get_u32(buf.data() + pos);
    if (pos + 12 + len > buf.size()) throw IoError("truncated png: " + path);
    const char* type = reinterpret_cast<const char*>(buf.data() + pos + 4);
    const unsigned char* data = buf.data() + pos + 8;
    if (std::memcmp(type, "IHDR", 4) == 0) {
      if (len != 13) throw IoError("bad IHDR: " + path);
      img.width = static_cast<int>(get_u32(data));
      img.height = static_cast<int>(get_u32(data + 4));
      img.bit_depth = data[8];
      int color_type = data[9];
      interlace = data[12];
      if (color_type == 0) img.channels = 1;
      else if (color_type == 2) img.channels = 3;
      else throw IoError("unsupported png color type " + std::to_string(color_type) + ": " + path);
      if (img.bit_depth != 8 && img.bit_depth != 16)
        throw IoError("unsupported png bit depth " + std::to_string(img.bit_depth) + ": " + path);
      if (interlace != 0) throw IoError("interlaced png unsupported: " + path);
      seen_ihdr = true;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), data, data + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      seen_iend = true;
    }
    pos += 12 + len;
  }
  if (!seen_ihdr || img.width <= 0 || img.height <= 0) throw IoError("missing IHDR: " + path);

  const int bytes_per_sample = img.bit_depth / 8;
  const size_t bpp = static_cast<size_t>(img.channels) * bytes_per_sample;  // filter unit
  const size_t stride = static_cast<size_t>(img.width) * bpp;
  std::vector<unsigned char> raw((stride + 1) * static_cast<size_t>(img.height));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  int zrc = uncompress(raw.data(), &raw_len, idat.data(), static_cast<uLong>(idat.size()));
  if (zrc != Z_OK || raw_len != raw.size()) throw IoError("png inflate failed: " + path);

  // un-filter
  std::vector<unsigned char> prev(stride, 0);
  std::vector<unsigned char> cur(stride);
  img.samples.resize(img.sample_count());
  size_t si = 0;
  for (int y = 0; y < img.height; ++y) {
    const unsigned char* row = raw.data() + static_cast<size_t>(y) * (stride + 1);
    int filter = row[0];
    const unsigned char* src = row + 1;
    for (size_t x = 0; x < stride; ++x) {
      int a = x >= bpp ? cur[x - bpp] : 0;
      int b = prev[x];
      int c = x >= bpp ? prev[x - bpp] : 0;
      int v = src[x];
      switch (filter) {
        case 0: break;
        case 1: v += a; break;
        case 2: v += b; break;
        case 3: v += (a + b) / 2; break;
        case 4: v += paeth(a, b, c); break;
        default: throw IoError("bad png filter type: " + path);
      }
      cur[x] = static_cast<unsigned char>(v & 0xff);
    }
    for (size_t x = 0; x < stride; x += bytes_per_sample) {
      if (img.bit_depth == 16)
        img.samples[si++] = static_cast<std::uint16_t>((cur[x] << 8) | cur[x + 1]);
      else
        img.samples[si++] = cur[x];
    }
    std::swap(prev, cur);
  }
  return img;
}

}  // namespace rgbdmae
