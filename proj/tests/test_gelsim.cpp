#include <cstdlib>

#include <gtest/gtest.h>

#include "support.hpp"
#include "tacsync/gelsim.hpp"

using namespace tacsync;
using namespace tacsync::gelsim;

namespace {

SensorConfig quiet_sensor() {
  SensorConfig c = default_sensor_config(0);
  c.noise_sigma = 0.0;
  return c;
}

DepthMap from_function(std::size_t h, std::size_t w, double pitch, double (*f)(double, double)) {
  std::vector<double> z(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) z[y * w + x] = f(static_cast<double>(x) * pitch, static_cast<double>(y) * pitch);
  return DepthMap(h, w, std::move(z));
}

}  // namespace

TEST(DepthToGradients, ConstantDepthIsFlat) {
  const GradientField g = depth_to_gradients(DepthMap(5, 6, std::vector<double>(30, 0.7)), 0.1);
  for (double v : g.gx()) EXPECT_EQ(v, 0.0);
  for (double v : g.gy()) EXPECT_EQ(v, 0.0);
}

TEST(DepthToGradients, Plane) {
  const DepthMap d = from_function(8, 9, 0.1, [](double x, double) { return 2.0 * x; });
  const GradientField g = depth_to_gradients(d, 0.1);
  for (std::size_t i = 0; i < g.gx().size(); ++i) {
    EXPECT_NEAR(g.gx()[i], 2.0, 1e-12);
    EXPECT_NEAR(g.gy()[i], 0.0, 1e-12);
  }
}

TEST(DepthToGradients, ParaboloidInterior) {
  const double h = 0.05;
  const DepthMap d = from_function(20, 24, h, [](double x, double y) { return x * x + y * y; });
  const GradientField g = depth_to_gradients(d, h);
  for (std::size_t y = 1; y + 1 < 20; ++y)
    for (std::size_t x = 1; x + 1 < 24; ++x) {
      EXPECT_NEAR(g.gx(y, x), 2.0 * static_cast<double>(x) * h, 1e-9);
      EXPECT_NEAR(g.gy(y, x), 2.0 * static_cast<double>(y) * h, 1e-9);
    }
  // One-sided border differences carry an O(h) error of exactly h here.
  EXPECT_NEAR(g.gx(3, 0), h, 1e-9);
}

TEST(DepthToGradients, RejectsSinglePixelAxis) {
  EXPECT_THROW(depth_to_gradients(DepthMap(1, 5, std::vector<double>(5, 0.0)), 0.1), DimensionMismatch);
}

TEST(Render, FlatSurfaceUnderOverheadLight) {
  SensorConfig c = quiet_sensor();
  c.lights[0] = {{0.0, 0.0, 1.0}, 0.8};
  const TactileFrame f = render(DepthMap::zeros(c.height, c.width), c);
  for (std::size_t y = 0; y < c.height; ++y)
    for (std::size_t x = 0; x < c.width; ++x) EXPECT_NEAR(f(y, x, 0), 0.8, 1e-15);
}

TEST(Render, MatchesLambertianFormulaPerPixel) {
  SensorConfig c = quiet_sensor();
  c.channel_gain = {1.1, 0.9, 1.0};
  c.channel_offset = {0.01, -0.02, 0.03};
  const Indenter ind{Shape::Sphere, 3.0, 120.0, 1.0, 0.8, 0.4, 0.6};
  const DepthMap d = make_indenter(ind, c.height, c.width, c.pixel_pitch_mm);
  const GradientField g = depth_to_gradients(d, c.pixel_pitch_mm);
  const TactileFrame f = render(d, c);
  for (std::size_t p = 0; p < c.height * c.width; p += 37) {
    const double nx = -g.gx()[p], ny = -g.gy()[p], norm = std::sqrt(nx * nx + ny * ny + 1.0);
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const auto& l = c.lights[ch];
      const double dot = (nx * l.direction[0] + ny * l.direction[1] + l.direction[2]) / norm;
      const double expect =
          std::clamp(c.channel_gain[ch] * c.albedo * l.intensity * std::max(0.0, dot) + c.channel_offset[ch], 0.0, 1.0);
      EXPECT_NEAR(f.values()[3 * p + ch], expect, 1e-12);
    }
  }
}

// Depth grows into the gel, so past the centre of a sphere imprint (+x side)
// depth falls, gx < 0 and the normal (-gx, -gy, 1) leans towards +x: a light
// on the +x side lights that half brightest.
TEST(Render, RedChannelPeaksOnTheLitSideOfASphere) {
  SensorConfig c = quiet_sensor();
  c.lights[0] = {light_direction(0.0, 30.0), 0.7};
  const Indenter ind{Shape::Sphere, 3.0, 120.0, 1.0, 1.0, 0.5, 0.5};
  const DepthMap d = make_indenter(ind, c.height, c.width, c.pixel_pitch_mm);
  const DifferentialFrame diff = differential(render(d, c), reference_frame(c));

  std::size_t best = 0;
  for (std::size_t p = 0; p < c.height * c.width; ++p)
    if (diff.values()[3 * p] > diff.values()[3 * best]) best = p;
  const double cx = 0.5 * static_cast<double>(c.width - 1);
  const double bx = static_cast<double>(best % c.width), by = static_cast<double>(best / c.width);
  EXPECT_GT(bx, cx);

  // Brightest pixel of the analytic cap: normal closest to the light.
  const double R = 3.0, depth = 1.0, pitch = c.pixel_pitch_mm;
  const auto& l = c.lights[0].direction;
  double best_dot = -1.0;
  double ax = 0.0, ay = 0.0;
  for (std::size_t y = 0; y < c.height; ++y)
    for (std::size_t x = 0; x < c.width; ++x) {
      const double dx = (static_cast<double>(x) - cx) * pitch, dy = (static_cast<double>(y) - cx) * pitch;
      const double r2 = dx * dx + dy * dy;
      if (std::sqrt(R * R - std::min(r2, R * R)) - (R - depth) <= 0.0) continue;
      // Outward normal of the gel surface z = sqrt(R^2 - r^2) - (R - d):
      // (-dz/dx, -dz/dy, 1) with dz/dx = -dx / sqrt(R^2 - r^2).
      const double s = std::sqrt(R * R - r2);
      double n[3] = {dx / s, dy / s, 1.0};
      const double nn = std::sqrt(n[0] * n[0] + n[1] * n[1] + 1.0);
      const double dot = (n[0] * l[0] + n[1] * l[1] + n[2] * l[2]) / nn;
      if (dot > best_dot) {
        best_dot = dot;
        ax = static_cast<double>(x);
        ay = static_cast<double>(y);
      }
    }
  EXPECT_LE(std::abs(bx - ax), 2.0);
  EXPECT_LE(std::abs(by - ay), 2.0);
}

TEST(Render, SameSeedSameFrame) {
  const SensorConfig c = default_sensor_config(2);
  const DepthMap d = make_indenter({}, c.height, c.width, c.pixel_pitch_mm);
  EXPECT_EQ(render(d, c, 99), render(d, c, 99));
  EXPECT_FALSE(render(d, c, 99) == render(d, c, 100));
}

TEST(Render, LinearInLightIntensity) {
  SensorConfig a = quiet_sensor();
  a.illumination_falloff = 0.2;
  for (auto& l : a.lights) l.intensity = 0.35;
  SensorConfig b = a;
  for (auto& l : b.lights) l.intensity = 0.7;
  const DepthMap d = make_indenter({Shape::Cone, 3.0, 110.0, 1.0, 0.6, 0.5, 0.5}, a.height, a.width, a.pixel_pitch_mm);
  const TactileFrame fa = render(d, a), fb = render(d, b);
  for (std::size_t i = 0; i < fa.values().size(); ++i) EXPECT_NEAR(fb.values()[i], 2.0 * fa.values()[i], 1e-12);
}

TEST(Render, ReferenceIsFlatRender) {
  const SensorConfig c = default_sensor_config(1);
  EXPECT_EQ(reference_frame(c), render(DepthMap::zeros(c.height, c.width), c));
}

TEST(Render, RejectsWrongResolution) {
  EXPECT_THROW(render(DepthMap::zeros(10, 10), default_sensor_config()), DimensionMismatch);
}

TEST(Render, FixedPatternCancelsInDifferentials) {
  // High lights keep every pixel away from the clamp.
  SensorConfig plain = quiet_sensor();
  plain.lights = ring_lights(60.0, 0.7);
  SensorConfig c = plain;
  c.fixed_pattern_sigma = 0.03;
  const DepthMap d = make_indenter({Shape::Sphere, 3.0, 120.0, 1.0, 0.3, 0.5, 0.5}, c.height, c.width, c.pixel_pitch_mm);
  const auto with = differential(render(d, c), reference_frame(c));
  const auto without = differential(render(d, plain), reference_frame(plain));
  EXPECT_FALSE(render(d, c) == render(d, plain));
  for (std::size_t i = 0; i < with.values().size(); ++i) EXPECT_NEAR(with.values()[i], without.values()[i], 1e-12);
}

TEST(Indenter, FlatIsZero) {
  const DepthMap d = make_indenter({Shape::Flat}, 16, 16, 0.1);
  for (double v : d.values()) EXPECT_EQ(v, 0.0);
}

TEST(Indenter, SpherePeakAtCentrePixel) {
  const DepthMap d = make_indenter({Shape::Sphere, 3.0, 120.0, 1.0, 1.0, 0.5, 0.5}, 65, 65, 0.1);
  EXPECT_DOUBLE_EQ(d(32, 32), 1.0);
  EXPECT_DOUBLE_EQ(d.max(), 1.0);
}

TEST(Indenter, SphereFootprintRadius) {
  const Indenter ind{Shape::Sphere, 3.0, 120.0, 1.0, 1.0, 0.5, 0.5};
  EXPECT_NEAR(ind.footprint_mm(), std::sqrt(5.0), 1e-15);
  const double pitch = 0.05;
  const DepthMap d = make_indenter(ind, 121, 121, pitch);
  double reach = 0.0;
  for (std::size_t y = 0; y < 121; ++y)
    for (std::size_t x = 0; x < 121; ++x)
      if (d(y, x) > 0.0) reach = std::max(reach, std::hypot((x - 60.0) * pitch, (y - 60.0) * pitch));
  EXPECT_LT(reach, std::sqrt(5.0));
  EXPECT_GT(reach, std::sqrt(5.0) - pitch);
}

TEST(Indenter, ConeAndRidgeShapes) {
  const DepthMap cone = make_indenter({Shape::Cone, 3.0, 90.0, 1.0, 0.5, 0.5, 0.5}, 41, 41, 0.1);
  EXPECT_DOUBLE_EQ(cone(20, 20), 0.5);
  EXPECT_NEAR(cone(20, 22), 0.5 - 0.2, 1e-12);  // 45 degree flanks
  const DepthMap ridge = make_indenter({Shape::Ridge, 1.0, 120.0, 1.0, 0.4, 0.5, 0.5}, 41, 41, 0.1);
  EXPECT_DOUBLE_EQ(ridge(20, 20), 0.4);
  EXPECT_DOUBLE_EQ(ridge(28, 20), 0.4);  // along the crest, inside the half-length
  EXPECT_EQ(ridge(20, 26), 0.0);         // beyond half the width
}

TEST(Indenter, RejectsInvalidParameters) {
  EXPECT_THROW(make_indenter({Shape::Sphere, 3.0, 120.0, 1.0, -0.1, 0.5, 0.5}, 8, 8, 0.1), InvalidArgument);
  EXPECT_THROW(make_indenter({Shape::Sphere, -1.0, 120.0, 1.0, 0.1, 0.5, 0.5}, 8, 8, 0.1), InvalidArgument);
  EXPECT_THROW(make_indenter({Shape::Cone, 1.0, 180.0, 1.0, 0.1, 0.5, 0.5}, 8, 8, 0.1), InvalidArgument);
}

TEST(Dataset, FiftyCaptureProtocol) {
  const SensorConfig c = default_sensor_config(0);
  const Dataset train = generate_dataset(c, 50, 7, InputMode::Diff);
  const Dataset test = generate_dataset(c, 5, 8, InputMode::Diff);
  ASSERT_EQ(train.size(), 50u);
  ASSERT_EQ(test.size(), 5u);
  for (const auto& e : train.entries) {
    const FrameView v = view_of(e.input);
    EXPECT_EQ(v.height, e.truth.height());
    EXPECT_EQ(v.width, e.truth.width());
    EXPECT_TRUE(std::holds_alternative<DifferentialFrame>(e.input));
    EXPECT_GE(e.indenter.max_depth_mm, 0.2);
    EXPECT_LE(e.indenter.max_depth_mm, 1.0);
    EXPECT_GE(e.indenter.center_x, 0.2);
    EXPECT_LE(e.indenter.center_x, 0.8);
    // Imprints stay inside the frame.
    for (std::size_t x = 0; x < c.width; ++x) {
      EXPECT_EQ(e.depth(0, x), 0.0);
      EXPECT_EQ(e.depth(c.height - 1, x), 0.0);
    }
  }
}

TEST(Dataset, RawModeKeepsAbsoluteFrames) {
  const Dataset ds = generate_dataset(default_sensor_config(0), 3, 1, InputMode::Raw);
  for (const auto& e : ds.entries) EXPECT_TRUE(std::holds_alternative<TactileFrame>(e.input));
}

TEST(Dataset, FlatProbeInDiffModeIsZero) {
  const Dataset ds = render_dataset(quiet_sensor(), {Indenter{Shape::Flat}}, 3, InputMode::Diff);
  for (double v : view_of(ds.entries[0].input).values) EXPECT_EQ(v, 0.0);
  for (double v : ds.entries[0].truth.gx()) EXPECT_EQ(v, 0.0);
  for (double v : ds.entries[0].truth.gy()) EXPECT_EQ(v, 0.0);
}

TEST(Dataset, SameSeedIdenticalRegardlessOfWorkers) {
  const SensorConfig c = default_sensor_config(1);
  ::setenv("TACSYNC_THREADS", "1", 1);
  const Dataset a = generate_dataset(c, 12, 5, InputMode::Diff);
  ::setenv("TACSYNC_THREADS", "4", 1);
  const Dataset b = generate_dataset(c, 12, 5, InputMode::Diff);
  ::unsetenv("TACSYNC_THREADS");
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(std::get<DifferentialFrame>(a.entries[i].input), std::get<DifferentialFrame>(b.entries[i].input));
    EXPECT_EQ(a.entries[i].truth, b.entries[i].truth);
  }
  const Dataset other = generate_dataset(c, 12, 6, InputMode::Diff);
  EXPECT_FALSE(std::get<DifferentialFrame>(a.entries[0].input) == std::get<DifferentialFrame>(other.entries[0].input));
}

TEST(Dataset, RejectsZeroCaptures) { EXPECT_THROW(generate_dataset(default_sensor_config(), 0, 1, InputMode::Diff), InvalidArgument); }
