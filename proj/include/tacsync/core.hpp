#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tacsync/error.hpp"

// Image conventions used throughout: row-major storage, origin at the top-left
// pixel, +x to the right along the width axis, +y downward along the height
// axis. Colour images interleave channels (R, G, B) per pixel. Depth is in
// millimetres, positive into the gel; gradients are dimensionless mm/mm.

namespace tacsync {

using Vec3 = std::array<double, 3>;

inline constexpr std::size_t kColorChannels = 3;

struct FrameMeta {
  int sensor_id = 0;
  std::uint64_t round_id = 0;
  std::int64_t capture_time_us = 0;
};

struct UnitRange {
  static constexpr double lo = 0.0;
  static constexpr double hi = 1.0;
  static constexpr const char* kind = "frame";
};

struct SignedUnitRange {
  static constexpr double lo = -1.0;
  static constexpr double hi = 1.0;
  static constexpr const char* kind = "diff";
};

// Non-owning view over any colour image, used by the regressors so that raw
// and differential inputs share one code path.
struct FrameView {
  std::size_t height = 0;
  std::size_t width = 0;
  std::span<const double> values;

  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return values[(y * width + x) * kColorChannels + c];
  }
};

/// H x W x 3 colour image whose values are confined to Range. Immutable after
/// construction; the constructor rejects buffers that violate the range or
/// size invariants.
template <typename Range>
class BasicFrame {
 public:
  BasicFrame(FrameMeta meta, std::size_t height, std::size_t width,
             std::vector<double> values)
      : meta_(meta), height_(height), width_(width), values_(std::move(values)) {
    if (height_ == 0 || width_ == 0)
      throw DimensionMismatch("frame must have non-zero height and width");
    if (values_.size() != height_ * width_ * kColorChannels)
      throw DimensionMismatch("frame buffer holds " + std::to_string(values_.size()) +
                              " values, expected " +
                              std::to_string(height_ * width_ * kColorChannels));
    for (double v : values_)
      if (!(v >= Range::lo && v <= Range::hi))
        throw InvalidField(std::string(Range::kind) + " value out of range: " +
                           std::to_string(v));
  }

  const FrameMeta& meta() const { return meta_; }
  int sensor_id() const { return meta_.sensor_id; }
  std::uint64_t round_id() const { return meta_.round_id; }
  std::int64_t capture_time_us() const { return meta_.capture_time_us; }
  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::span<const double> values() const { return values_; }

  double operator()(std::size_t y, std::size_t x, std::size_t c) const {
    return values_[(y * width_ + x) * kColorChannels + c];
  }

  FrameView view() const { return {height_, width_, values_}; }

  friend bool operator==(const BasicFrame& a, const BasicFrame& b) {
    return a.meta_.sensor_id == b.meta_.sensor_id && a.meta_.round_id == b.meta_.round_id &&
           a.meta_.capture_time_us == b.meta_.capture_time_us && a.height_ == b.height_ &&
           a.width_ == b.width_ && a.values_ == b.values_;
  }

 private:
  FrameMeta meta_;
  std::size_t height_;
  std::size_t width_;
  std::vector<double> values_;
};

using TactileFrame = BasicFrame<UnitRange>;
using DifferentialFrame = BasicFrame<SignedUnitRange>;

namespace detail {

inline void check_grid(std::size_t h, std::size_t w, std::size_t n, const char* what) {
  if (h == 0 || w == 0) throw DimensionMismatch(std::string(what) + " has an empty axis");
  if (n != h * w)
    throw DimensionMismatch(std::string(what) + " buffer holds " + std::to_string(n) +
                            " values, expected " + std::to_string(h * w));
}

inline void check_finite(std::span<const double> v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) throw InvalidField(std::string(what) + " contains a non-finite value");
}

}  // namespace detail

// Plain H x W real field (divergence, residuals).
struct ScalarField {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;

  double& operator()(std::size_t y, std::size_t x) { return values[y * width + x]; }
  double operator()(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

class GradientField {
 public:
  GradientField(std::size_t height, std::size_t width, std::vector<double> gx,
                std::vector<double> gy)
      : height_(height), width_(width), gx_(std::move(gx)), gy_(std::move(gy)) {
    detail::check_grid(height_, width_, gx_.size(), "gx");
    detail::check_grid(height_, width_, gy_.size(), "gy");
    detail::check_finite(gx_, "gx");
    detail::check_finite(gy_, "gy");
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::span<const double> gx() const { return gx_; }
  std::span<const double> gy() const { return gy_; }
  double gx(std::size_t y, std::size_t x) const { return gx_[y * width_ + x]; }
  double gy(std::size_t y, std::size_t x) const { return gy_[y * width_ + x]; }

  friend bool operator==(const GradientField&, const GradientField&) = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<double> gx_;
  std::vector<double> gy_;
};

class DepthMap {
 public:
  DepthMap(std::size_t height, std::size_t width, std::vector<double> z)
      : height_(height), width_(width), z_(std::move(z)) {
    detail::check_grid(height_, width_, z_.size(), "depth");
    detail::check_finite(z_, "depth");
  }

  static DepthMap zeros(std::size_t height, std::size_t width) {
    return DepthMap(height, width, std::vector<double>(height * width, 0.0));
  }

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::span<const double> values() const { return z_; }
  double operator()(std::size_t y, std::size_t x) const { return z_[y * width_ + x]; }

  double max() const {
    double m = z_.front();
    for (double v : z_) m = std::max(m, v);
    return m;
  }

  friend bool operator==(const DepthMap&, const DepthMap&) = default;

 private:
  std::size_t height_;
  std::size_t width_;
  std::vector<double> z_;
};

struct Light {
  Vec3 direction{0.0, 0.0, 1.0};  // unit vector from the surface towards the light
  double intensity = 0.7;
};

/// Geometry and photometric parameters of one simulated sensor.
///
/// Two terms extend the ideal directional-light model, and both vanish at zero:
///  - illumination_falloff: each light is brighter on its own side of the
///    field, intensity * (1 + falloff * u) with u in [-1, 1] the position
///    projected on the light's azimuth (side-mounted LEDs are not at infinity);
///  - fixed_pattern_sigma: a static per-pixel, per-channel background drawn
///    once from rng_seed. It repeats in every capture of a sensor, so it
///    cancels in differential frames.
struct SensorConfig {
  int sensor_id = 0;
  std::size_t height = 64;
  std::size_t width = 64;
  double pixel_pitch_mm = 0.1;
  std::array<Light, 3> lights{};
  double albedo = 1.0;
  Vec3 channel_offset{0.0, 0.0, 0.0};
  Vec3 channel_gain{1.0, 1.0, 1.0};
  double noise_sigma = 0.005;
  double illumination_falloff = 0.0;
  double fixed_pattern_sigma = 0.0;
  std::uint64_t rng_seed = 1;

  void validate() const {
    if (height < 2 || width < 2) throw InvalidConfig("sensor must be at least 2x2 pixels");
    if (!(pixel_pitch_mm > 0.0)) throw InvalidConfig("pixel_pitch_mm must be positive");
    for (const auto& l : lights) {
      const double n = std::sqrt(l.direction[0] * l.direction[0] +
                                 l.direction[1] * l.direction[1] +
                                 l.direction[2] * l.direction[2]);
      if (std::abs(n - 1.0) > 1e-9) throw InvalidConfig("light direction is not unit length");
      if (!(l.intensity > 0.0 && l.intensity <= 1.0))
        throw InvalidConfig("light intensity must lie in (0, 1]");
    }
    if (!(albedo > 0.0 && albedo <= 1.0)) throw InvalidConfig("albedo must lie in (0, 1]");
    for (int c = 0; c < 3; ++c)
      if (!std::isfinite(channel_offset[c]) || !std::isfinite(channel_gain[c]) ||
          channel_gain[c] <= 0.0)
        throw InvalidConfig("channel offsets must be finite and gains positive");
    if (!(noise_sigma >= 0.0)) throw InvalidConfig("noise_sigma must be >= 0");
    if (!(fixed_pattern_sigma >= 0.0)) throw InvalidConfig("fixed_pattern_sigma must be >= 0");
    if (!(illumination_falloff >= 0.0 && illumination_falloff < 1.0))
      throw InvalidConfig("illumination_falloff must lie in [0, 1)");
  }
};

inline Vec3 light_direction(double azimuth_deg, double elevation_deg) {
  constexpr double deg = std::numbers::pi / 180.0;
  const double az = azimuth_deg * deg;
  const double el = elevation_deg * deg;
  return {std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)};
}

// Three lights at azimuths 0/120/240 degrees (R, G, B).
inline std::array<Light, 3> ring_lights(double elevation_deg, double intensity) {
  return {Light{light_direction(0.0, elevation_deg), intensity},
          Light{light_direction(120.0, elevation_deg), intensity},
          Light{light_direction(240.0, elevation_deg), intensity}};
}

/// Desk-scale default: 64x64 at 0.1 mm, lights 20 degrees above the gel plane
/// with intensity 0.7, albedo 1, noise sigma 0.005.
inline SensorConfig default_sensor_config(int sensor_id = 0) {
  SensorConfig cfg;
  cfg.sensor_id = sensor_id;
  cfg.lights = ring_lights(20.0, 0.7);
  cfg.rng_seed = 1000 + static_cast<std::uint64_t>(sensor_id);
  return cfg;
}

/// frame - reference, per pixel and channel.
inline DifferentialFrame differential(const TactileFrame& frame, const TactileFrame& reference) {
  if (frame.height() != reference.height() || frame.width() != reference.width())
    throw DimensionMismatch("differential: frame and reference shapes differ");
  if (frame.sensor_id() != reference.sensor_id())
    throw DimensionMismatch("differential: frame and reference come from different sensors");
  const auto a = frame.values();
  const auto b = reference.values();
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
  return DifferentialFrame(frame.meta(), frame.height(), frame.width(), std::move(out));
}

}  // namespace tacsync
