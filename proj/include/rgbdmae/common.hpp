#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace rgbdmae {

using i64 = std::int64_t;
using u64 = std::uint64_t;

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are little-endian; big-endian hosts unsupported");

// Error taxonomy. Every throw site includes enough context (path, record id,
// offending dimension) for the message to stand alone.
struct DimensionError : std::runtime_error {
  explicit DimensionError(const std::string& msg) : std::runtime_error("dimension error: " + msg) {}
};

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error("validation error: " + msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error("i/o error: " + msg) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error("config error: " + msg) {}
};

struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error("numerical error: " + msg) {}
};

enum class Modality { Rgb, Depth };

inline const char* modality_name(Modality m) { return m == Modality::Rgb ? "rgb" : "depth"; }

// round-half-up; used for every masked-count computation
inline i64 round_half_up(double x) { return static_cast<i64>(std::floor(x + 0.5)); }

}  // namespace rgbdmae
