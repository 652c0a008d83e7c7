#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "tacsync/core.hpp"
#include "tacsync/framing.hpp"
#include "tacsync/gelsim.hpp"
#include "tacsync/poisson.hpp"
#include "tacsync/rng.hpp"

namespace tacsync::testing {

// z = d (1 - r^2 / R^2), clipped at 0, centred on the grid; r in pixels.
inline DepthMap dome(std::size_t h, std::size_t w, double d, double radius_px) {
  std::vector<double> z(h * w);
  const double cy = 0.5 * static_cast<double>(h - 1), cx = 0.5 * static_cast<double>(w - 1);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double r2 = std::pow(static_cast<double>(x) - cx, 2) + std::pow(static_cast<double>(y) - cy, 2);
      z[y * w + x] = std::max(0.0, d * (1.0 - r2 / (radius_px * radius_px)));
    }
  return DepthMap(h, w, std::move(z));
}

// ||a - b|| / ||b||
inline double relative_rmse(const DepthMap& a, const DepthMap& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.values().size(); ++i) {
    num += std::pow(a.values()[i] - b.values()[i], 2);
    den += std::pow(b.values()[i], 2);
  }
  return std::sqrt(num / den);
}

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::abs(x));
  return m;
}

// Max |lap(z) - div(g)| over interior pixels.
inline double poisson_residual(const GradientField& g, const DepthMap& z, double pitch) {
  const ScalarField lap = poisson::laplacian(z, pitch);
  const ScalarField div = poisson::divergence(g, pitch);
  double m = 0.0;
  for (std::size_t y = 1; y + 1 < z.height(); ++y)
    for (std::size_t x = 1; x + 1 < z.width(); ++x) m = std::max(m, std::abs(lap(y, x) - div(y, x)));
  return m;
}

inline GradientField random_gradients(std::size_t h, std::size_t w, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> gx(h * w), gy(h * w);
  for (auto& v : gx) v = rng.uniform(-1.0, 1.0);
  for (auto& v : gy) v = rng.uniform(-1.0, 1.0);
  return GradientField(h, w, std::move(gx), std::move(gy));
}

inline framing::Bytes random_bytes(Rng& rng, std::size_t n, double zero_fraction) {
  framing::Bytes b(n);
  for (auto& x : b) x = rng.uniform() < zero_fraction ? 0 : static_cast<std::uint8_t>(1 + rng.below(255));
  return b;
}

inline framing::Bytes from_hex(const std::string& hex) {
  framing::Bytes out;
  if (hex == "-") return out;
  for (std::size_t i = 0; i + 1 < hex.size(); i += 2)
    out.push_back(static_cast<std::uint8_t>(std::stoul(hex.substr(i, 2), nullptr, 16)));
  return out;
}

struct GoldenPacket {
  std::string name;
  framing::Packet packet;
  framing::Bytes framed;
};

inline std::vector<GoldenPacket> load_golden_packets(const std::string& path) {
  std::ifstream in(path);
  std::vector<GoldenPacket> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    GoldenPacket g;
    unsigned version = 0, sensor = 0;
    std::uint64_t round = 0, time = 0;
    std::string payload, framed;
    ls >> g.name >> version >> sensor >> round >> time >> payload >> framed;
    g.packet.version = static_cast<std::uint8_t>(version);
    g.packet.sensor_id = static_cast<std::uint8_t>(sensor);
    g.packet.round_id = static_cast<std::uint32_t>(round);
    g.packet.capture_time_us = time;
    g.packet.payload = from_hex(payload);
    g.framed = from_hex(framed);
    out.push_back(std::move(g));
  }
  return out;
}

// (row, column) of the deepest pixel.
inline std::pair<std::size_t, std::size_t> argmax(const DepthMap& z) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < z.values().size(); ++i)
    if (z.values()[i] > z.values()[best]) best = i;
  return {best / z.width(), best % z.width()};
}

}  // namespace tacsync::testing
