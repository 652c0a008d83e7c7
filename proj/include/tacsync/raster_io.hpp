#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "tacsync/core.hpp"
#include "tacsync/error.hpp"

// TSR1 raster files: an ASCII line "TSR1 <kind> <H> <W> <C>\n" followed by
// H*W*C little-endian float32 values in row-major, channel-interleaved order.
// Kinds: frame (C=3), diff (C=3), grad (C=2, gx then gy), depth (C=1).

namespace tacsync::io {

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Writes to a sibling temporary and renames it over the target, so readers
/// never observe a partially written artifact.
inline void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

inline void put_f32_le(std::vector<std::uint8_t>& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

inline float get_f32_le(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return std::bit_cast<float>(bits);
}

struct Raster {
  std::string kind;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<float> data;
};

inline std::size_t channels_for(const std::string& kind) {
  if (kind == "frame" || kind == "diff") return 3;
  if (kind == "grad") return 2;
  if (kind == "depth") return 1;
  throw FormatError("unknown TSR1 kind '" + kind + "'");
}

inline std::vector<std::uint8_t> encode_raster(const Raster& r) {
  if (channels_for(r.kind) != r.channels) throw FormatError("channel count does not match kind");
  if (r.data.size() != r.height * r.width * r.channels) throw FormatError("raster buffer size mismatch");
  const std::string header = "TSR1 " + r.kind + " " + std::to_string(r.height) + " " +
                             std::to_string(r.width) + " " + std::to_string(r.channels) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(header.size() + 4 * r.data.size());
  for (float v : r.data) put_f32_le(out, v);
  return out;
}

inline Raster decode_raster(std::span<const std::uint8_t> bytes) {
  std::size_t nl = 0;
  while (nl < bytes.size() && nl < 128 && bytes[nl] != '\n') ++nl;
  if (nl >= bytes.size() || bytes[nl] != '\n') throw FormatError("TSR1 header line not found");
  std::istringstream header(std::string(bytes.begin(), bytes.begin() + static_cast<long>(nl)));
  std::string magic;
  Raster r;
  long long h = -1, w = -1, c = -1;
  header >> magic >> r.kind >> h >> w >> c;
  if (!header || magic != "TSR1") throw FormatError("bad TSR1 magic or header");
  if (h <= 0 || w <= 0 || c <= 0) throw FormatError("bad TSR1 dimensions");
  r.height = static_cast<std::size_t>(h);
  r.width = static_cast<std::size_t>(w);
  r.channels = static_cast<std::size_t>(c);
  if (channels_for(r.kind) != r.channels) throw FormatError("channel count does not match kind");
  const std::size_t n = r.height * r.width * r.channels;
  if (bytes.size() - nl - 1 != 4 * n) throw FormatError("TSR1 payload size mismatch");
  r.data.resize(n);
  const std::uint8_t* p = bytes.data() + nl + 1;
  for (std::size_t i = 0; i < n; ++i) r.data[i] = get_f32_le(p + 4 * i);
  return r;
}

// 8-bit camera quantisation, applied only when datasets are written to disk.
inline std::uint8_t quantize_u8(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}
inline double dequantize_u8(std::uint8_t q) { return q / 255.0; }

template <typename Range>
Raster to_raster(const BasicFrame<Range>& f) {
  Raster r{Range::kind, f.height(), f.width(), 3, {}};
  r.data.assign(f.values().begin(), f.values().end());
  return r;
}

inline Raster to_raster(const GradientField& g) {
  Raster r{"grad", g.height(), g.width(), 2, {}};
  r.data.reserve(2 * g.height() * g.width());
  for (std::size_t i = 0; i < g.height() * g.width(); ++i) {
    r.data.push_back(static_cast<float>(g.gx()[i]));
    r.data.push_back(static_cast<float>(g.gy()[i]));
  }
  return r;
}

inline Raster to_raster(const DepthMap& d) {
  Raster r{"depth", d.height(), d.width(), 1, {}};
  r.data.assign(d.values().begin(), d.values().end());
  return r;
}

inline void expect_kind(const Raster& r, const char* kind) {
  if (r.kind != kind) throw FormatError("expected TSR1 kind '" + std::string(kind) + "', got '" + r.kind + "'");
}

inline TactileFrame tactile_from_raster(const Raster& r, FrameMeta meta = {}) {
  expect_kind(r, "frame");
  return TactileFrame(meta, r.height, r.width, {r.data.begin(), r.data.end()});
}

inline DifferentialFrame diff_from_raster(const Raster& r, FrameMeta meta = {}) {
  expect_kind(r, "diff");
  return DifferentialFrame(meta, r.height, r.width, {r.data.begin(), r.data.end()});
}

inline GradientField grad_from_raster(const Raster& r) {
  expect_kind(r, "grad");
  const std::size_t n = r.height * r.width;
  std::vector<double> gx(n), gy(n);
  for (std::size_t i = 0; i < n; ++i) {
    gx[i] = r.data[2 * i];
    gy[i] = r.data[2 * i + 1];
  }
  return GradientField(r.height, r.width, std::move(gx), std::move(gy));
}

inline DepthMap depth_from_raster(const Raster& r) {
  expect_kind(r, "depth");
  return DepthMap(r.height, r.width, {r.data.begin(), r.data.end()});
}

inline void save_raster(const std::filesystem::path& path, const Raster& r) {
  write_file_atomic(path, encode_raster(r));
}

template <typename T>
void save_raster(const std::filesystem::path& path, const T& value) {
  write_file_atomic(path, encode_raster(to_raster(value)));
}

inline Raster load_raster(const std::filesystem::path& path) { return decode_raster(read_file(path)); }

}  // namespace tacsync::io
