#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "tacsync/core.hpp"
#include "tacsync/error.hpp"
#include "tacsync/parallel.hpp"
#include "tacsync/rng.hpp"

namespace tacsync::gelsim {

enum class Shape { Flat, Sphere, Cone, Ridge };

inline const char* to_string(Shape s) {
  switch (s) {
    case Shape::Flat: return "flat";
    case Shape::Sphere: return "sphere";
    case Shape::Cone: return "cone";
    case Shape::Ridge: return "ridge";
  }
  return "?";
}

inline Shape shape_from_string(const std::string& s) {
  if (s == "flat") return Shape::Flat;
  if (s == "sphere") return Shape::Sphere;
  if (s == "cone") return Shape::Cone;
  if (s == "ridge") return Shape::Ridge;
  throw InvalidArgument("unknown indenter shape '" + s + "'");
}

/// Rigid probe pressed into the gel. The centre is given in normalised image
/// coordinates: (0,0) is the top-left pixel centre, (1,1) the bottom-right.
/// A ridge is a capsule: a segment of half-length radius_mm along y, with a
/// cos^2 cross-section of full width ridge_width_mm.
struct Indenter {
  Shape shape = Shape::Sphere;
  double radius_mm = 3.0;
  double apex_angle_deg = 120.0;
  double ridge_width_mm = 1.0;
  double max_depth_mm = 0.5;
  double center_x = 0.5;
  double center_y = 0.5;

  void validate() const {
    if (!(max_depth_mm >= 0.0)) throw InvalidArgument("max_depth_mm must be >= 0");
    if (!(radius_mm > 0.0) || !(apex_angle_deg > 0.0 && apex_angle_deg < 180.0) || !(ridge_width_mm > 0.0))
      throw InvalidArgument("indenter parameters must be positive (apex angle below 180)");
    if (shape == Shape::Sphere && max_depth_mm > radius_mm)
      throw InvalidArgument("sphere penetration deeper than its radius");
  }

  // Radius of the contact patch, in mm.
  double footprint_mm() const {
    switch (shape) {
      case Shape::Flat: return 0.0;
      case Shape::Sphere: return std::sqrt(2.0 * radius_mm * max_depth_mm - max_depth_mm * max_depth_mm);
      case Shape::Cone: return max_depth_mm * std::tan(apex_angle_deg * std::numbers::pi / 360.0);
      case Shape::Ridge: return radius_mm + 0.5 * ridge_width_mm;
    }
    return 0.0;
  }
};

inline DepthMap make_indenter(const Indenter& ind, std::size_t height, std::size_t width, double pixel_pitch_mm) {
  ind.validate();
  if (height == 0 || width == 0) throw DimensionMismatch("indenter grid must be non-empty");
  if (!(pixel_pitch_mm > 0.0)) throw InvalidArgument("pixel pitch must be positive");
  std::vector<double> z(height * width, 0.0);
  if (ind.shape == Shape::Flat) return DepthMap(height, width, std::move(z));

  const double cx = ind.center_x * static_cast<double>(width - 1);
  const double cy = ind.center_y * static_cast<double>(height - 1);
  const double d = ind.max_depth_mm;
  const double tan_half = std::tan(ind.apex_angle_deg * std::numbers::pi / 360.0);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double dx = (static_cast<double>(x) - cx) * pixel_pitch_mm;
      const double dy = (static_cast<double>(y) - cy) * pixel_pitch_mm;
      double v = 0.0;
      switch (ind.shape) {
        case Shape::Sphere: {
          const double r2 = dx * dx + dy * dy;
          const double R = ind.radius_mm;
          if (r2 < R * R) v = std::sqrt(R * R - r2) - (R - d);
          break;
        }
        case Shape::Cone:
          v = d - std::hypot(dx, dy) / tan_half;
          break;
        case Shape::Ridge: {
          const double along = std::max(0.0, std::abs(dy) - ind.radius_mm);
          const double s = std::hypot(dx, along);
          const double half = 0.5 * ind.ridge_width_mm;
          if (s < half) {
            const double c = std::cos(0.5 * std::numbers::pi * s / half);
            v = d * c * c;
          }
          break;
        }
        case Shape::Flat:
          break;
      }
      z[y * width + x] = std::max(0.0, v);
    }
  }
  return DepthMap(height, width, std::move(z));
}

/// Central differences in the interior, one-sided differences on the border.
inline GradientField depth_to_gradients(const DepthMap& d, double pixel_pitch_mm) {
  const std::size_t h = d.height(), w = d.width();
  if (h < 2 || w < 2) throw DimensionMismatch("depth_to_gradients needs at least 2 pixels per axis");
  if (!(pixel_pitch_mm > 0.0)) throw InvalidArgument("pixel pitch must be positive");
  std::vector<double> gx(h * w), gy(h * w);
  const double inv = 1.0 / pixel_pitch_mm;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double ddx, ddy;
      if (x == 0) ddx = d(y, 1) - d(y, 0);
      else if (x == w - 1) ddx = d(y, w - 1) - d(y, w - 2);
      else ddx = 0.5 * (d(y, x + 1) - d(y, x - 1));
      if (y == 0) ddy = d(1, x) - d(0, x);
      else if (y == h - 1) ddy = d(h - 1, x) - d(h - 2, x);
      else ddy = 0.5 * (d(y + 1, x) - d(y - 1, x));
      gx[y * w + x] = ddx * inv;
      gy[y * w + x] = ddy * inv;
    }
  }
  return GradientField(h, w, std::move(gx), std::move(gy));
}

// Static background of a sensor, drawn from its rng_seed. Empty when the
// fixed-pattern amplitude is zero.
inline std::vector<double> fixed_pattern(const SensorConfig& cfg) {
  if (cfg.fixed_pattern_sigma == 0.0) return {};
  Rng rng(derive_seed(cfg.rng_seed, "fixed-pattern"));
  std::vector<double> bg(cfg.height * cfg.width * kColorChannels);
  for (double& v : bg) v = rng.normal(0.0, cfg.fixed_pattern_sigma);
  return bg;
}

/// Lambertian image of a gel surface. With n = normalize(-gx, -gy, 1):
///   I_c = clamp01(gain_c * albedo * intensity_c(p) * max(0, n . l_c)
///                 + offset_c + background_c(p) + N(0, noise_sigma))
/// where intensity_c(p) = intensity_c * (1 + falloff * u_c(p)) and u_c is the
/// pixel position, scaled to [-1, 1], projected on light c's azimuth.
/// Noise comes from noise_seed so repeated captures on one sensor can differ.
inline TactileFrame render(const DepthMap& depth, const SensorConfig& cfg, std::uint64_t noise_seed,
                           FrameMeta meta = {}) {
  cfg.validate();
  if (depth.height() != cfg.height || depth.width() != cfg.width)
    throw DimensionMismatch("render: depth map does not match the sensor resolution");
  const GradientField g = depth_to_gradients(depth, cfg.pixel_pitch_mm);
  const std::vector<double> background = fixed_pattern(cfg);
  Rng noise(noise_seed);
  meta.sensor_id = cfg.sensor_id;

  std::array<Vec3, kColorChannels> azimuth{};
  for (std::size_t c = 0; c < kColorChannels; ++c) {
    const auto& d = cfg.lights[c].direction;
    const double planar = std::hypot(d[0], d[1]);
    azimuth[c] = planar > 0.0 ? Vec3{d[0] / planar, d[1] / planar, 0.0} : Vec3{0.0, 0.0, 0.0};
  }

  const std::size_t n = cfg.height * cfg.width;
  std::vector<double> out(n * kColorChannels);
  for (std::size_t p = 0; p < n; ++p) {
    const double nx = -g.gx()[p], ny = -g.gy()[p];
    const double inv_norm = 1.0 / std::sqrt(nx * nx + ny * ny + 1.0);
    const double u = 2.0 * static_cast<double>(p % cfg.width) / static_cast<double>(cfg.width - 1) - 1.0;
    const double w = 2.0 * static_cast<double>(p / cfg.width) / static_cast<double>(cfg.height - 1) - 1.0;
    for (std::size_t c = 0; c < kColorChannels; ++c) {
      const auto& l = cfg.lights[c];
      const double shade = std::max(0.0, (nx * l.direction[0] + ny * l.direction[1] + l.direction[2]) * inv_norm);
      double intensity = l.intensity;
      if (cfg.illumination_falloff > 0.0)
        intensity *= 1.0 + cfg.illumination_falloff * (u * azimuth[c][0] + w * azimuth[c][1]);
      double v = cfg.channel_gain[c] * (cfg.albedo * intensity * shade) + cfg.channel_offset[c];
      if (!background.empty()) v += background[p * kColorChannels + c];
      if (cfg.noise_sigma > 0.0) v += noise.normal(0.0, cfg.noise_sigma);
      out[p * kColorChannels + c] = std::clamp(v, 0.0, 1.0);
    }
  }
  return TactileFrame(meta, cfg.height, cfg.width, std::move(out));
}

inline TactileFrame render(const DepthMap& depth, const SensorConfig& cfg, FrameMeta meta = {}) {
  return render(depth, cfg, cfg.rng_seed, meta);
}

// No-contact reference capture of a sensor.
inline TactileFrame reference_frame(const SensorConfig& cfg) {
  return render(DepthMap::zeros(cfg.height, cfg.width), cfg);
}

enum class InputMode { Raw, Diff };

inline const char* to_string(InputMode m) { return m == InputMode::Raw ? "raw" : "diff"; }

inline InputMode mode_from_string(const std::string& s) {
  if (s == "raw") return InputMode::Raw;
  if (s == "diff") return InputMode::Diff;
  throw InvalidArgument("unknown input mode '" + s + "' (expected raw or diff)");
}

using Capture = std::variant<TactileFrame, DifferentialFrame>;

inline FrameView view_of(const Capture& c) {
  return std::visit([](const auto& f) { return f.view(); }, c);
}

struct DatasetEntry {
  Capture input;
  GradientField truth;
  DepthMap depth;
  Indenter indenter;
};

struct Dataset {
  SensorConfig config;
  InputMode mode = InputMode::Diff;
  std::uint64_t seed = 0;
  std::vector<DatasetEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }
};

/// Renders the given probes on one sensor. Capture i draws its noise from
/// derive_seed(seed, "capture", i), so the result does not depend on the order
/// (or thread) in which captures are rendered.
inline Dataset render_dataset(const SensorConfig& cfg, const std::vector<Indenter>& indenters,
                              std::uint64_t seed, InputMode mode) {
  cfg.validate();
  Dataset ds{cfg, mode, seed, {}};
  const TactileFrame reference = reference_frame(cfg);
  std::vector<std::optional<DatasetEntry>> slots(indenters.size());
  parallel_for(indenters.size(), [&](std::size_t i) {
    DepthMap depth = make_indenter(indenters[i], cfg.height, cfg.width, cfg.pixel_pitch_mm);
    GradientField truth = depth_to_gradients(depth, cfg.pixel_pitch_mm);
    FrameMeta meta{cfg.sensor_id, static_cast<std::uint64_t>(i), 0};
    TactileFrame frame = render(depth, cfg, derive_seed(seed, "capture", i), meta);
    Capture input = mode == InputMode::Raw ? Capture(std::move(frame)) : Capture(differential(frame, reference));
    slots[i].emplace(DatasetEntry{std::move(input), std::move(truth), std::move(depth), indenters[i]});
  });
  ds.entries.reserve(slots.size());
  for (auto& s : slots) ds.entries.push_back(std::move(*s));
  return ds;
}

/// Random probe that fits inside the sensor with a two-pixel margin.
///   shape: sphere 50 %, cone 25 %, ridge 25 %
///   depth U(0.2, 1.0) mm, sphere radius U(1.5, 4) mm, cone apex U(100, 150) deg,
///   ridge width U(0.8, 2.0) mm with half-length U(0.5, 1.5) mm,
///   centre uniform in the middle 60 % of the field.
/// Draws that would cross the margin are redrawn.
inline Indenter sample_indenter(Rng& rng, const SensorConfig& cfg) {
  const double half_w = 0.5 * static_cast<double>(cfg.width - 1) * cfg.pixel_pitch_mm;
  const double half_h = 0.5 * static_cast<double>(cfg.height - 1) * cfg.pixel_pitch_mm;
  const double margin = 2.0 * cfg.pixel_pitch_mm;
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Indenter ind;
    const double u = rng.uniform();
    ind.shape = u < 0.5 ? Shape::Sphere : (u < 0.75 ? Shape::Cone : Shape::Ridge);
    ind.max_depth_mm = rng.uniform(0.2, 1.0);
    ind.radius_mm = ind.shape == Shape::Ridge ? rng.uniform(0.5, 1.5) : rng.uniform(1.5, 4.0);
    ind.apex_angle_deg = rng.uniform(100.0, 150.0);
    ind.ridge_width_mm = rng.uniform(0.8, 2.0);
    ind.center_x = rng.uniform(0.2, 0.8);
    ind.center_y = rng.uniform(0.2, 0.8);
    const double cx = (ind.center_x - 0.5) * 2.0 * half_w;
    const double cy = (ind.center_y - 0.5) * 2.0 * half_h;
    double ext_x = ind.footprint_mm(), ext_y = ind.footprint_mm();
    if (ind.shape == Shape::Ridge) ext_x = 0.5 * ind.ridge_width_mm;
    if (half_w - std::abs(cx) - ext_x >= margin && half_h - std::abs(cy) - ext_y >= margin) return ind;
  }
  throw InvalidConfig("sensor field too small to place a probe inside its borders");
}

inline std::vector<Indenter> sample_indenters(const SensorConfig& cfg, std::size_t n, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "indenters"));
  std::vector<Indenter> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_indenter(rng, cfg));
  return out;
}

inline Dataset generate_dataset(const SensorConfig& cfg, std::size_t n_captures, std::uint64_t seed, InputMode mode) {
  if (n_captures < 1) throw InvalidArgument("n_captures must be >= 1");
  return render_dataset(cfg, sample_indenters(cfg, n_captures, seed), seed, mode);
}

}  // namespace tacsync::gelsim
