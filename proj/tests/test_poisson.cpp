#include <chrono>
#include <limits>

#include <gtest/gtest.h>

#include "support.hpp"
#include "tacsync/gelsim.hpp"
#include "tacsync/poisson.hpp"

using namespace tacsync;
using namespace tacsync::poisson;
using tacsync::testing::dome;
using tacsync::testing::poisson_residual;
using tacsync::testing::random_gradients;
using tacsync::testing::relative_rmse;

namespace {

GradientField zero_field(std::size_t h, std::size_t w) {
  return GradientField(h, w, std::vector<double>(h * w, 0.0), std::vector<double>(h * w, 0.0));
}

// Gauss-Seidel on the 2h-wide stencil with odd reflection about the border,
// as an independent check on the transform-based solver.
DepthMap gauss_seidel(const GradientField& g, double pitch, int sweeps) {
  const int h = static_cast<int>(g.height()), w = static_cast<int>(g.width());
  const ScalarField div = divergence(g, pitch);
  std::vector<double> z(static_cast<std::size_t>(h * w), 0.0);
  // Value at (y, x) with x or y possibly one step past the border, as a
  // coefficient on z(y', x') (reflected) or zero.
  auto axis = [](int i, int n, int& j) {  // n = last index (border)
    if (i == 0 || i == n) return 0.0;
    if (i < 0) { j = -i; return -1.0; }
    if (i > n) { j = 2 * n - i; return -1.0; }
    j = i;
    return 1.0;
  };
  for (int it = 0; it < sweeps; ++it)
    for (int y = 1; y + 1 < h; ++y)
      for (int x = 1; x + 1 < w; ++x) {
        double off = 0.0, diag = -4.0;
        for (int d : {-2, 2}) {
          int j = 0;
          double c = axis(x + d, w - 1, j);
          if (j == x && c != 0.0) diag += c;
          else if (c != 0.0) off += c * z[static_cast<std::size_t>(y * w + j)];
          c = axis(y + d, h - 1, j);
          if (j == y && c != 0.0) diag += c;
          else if (c != 0.0) off += c * z[static_cast<std::size_t>(j * w + x)];
        }
        const double rhs = 4.0 * pitch * pitch * div(static_cast<std::size_t>(y), static_cast<std::size_t>(x));
        z[static_cast<std::size_t>(y * w + x)] = (rhs - off) / diag;
      }
  return DepthMap(static_cast<std::size_t>(h), static_cast<std::size_t>(w), std::move(z));
}

}  // namespace

TEST(Divergence, ZeroField) {
  const ScalarField d = divergence(zero_field(6, 7));
  for (double v : d.values) EXPECT_EQ(v, 0.0);
}

TEST(Divergence, LinearFieldIsConstant) {
  const std::size_t h = 9, w = 11;
  const double pitch = 0.2;
  std::vector<double> gx(h * w), gy(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      gx[y * w + x] = 2.0 * static_cast<double>(x) * pitch;
      gy[y * w + x] = 2.0 * static_cast<double>(y) * pitch;
    }
  const ScalarField d = divergence(GradientField(h, w, gx, gy), pitch);
  for (double v : d.values) EXPECT_NEAR(v, 4.0, 1e-12);
}

TEST(Divergence, MatchesNaiveStencil) {
  const GradientField g = random_gradients(7, 8, 3);
  const ScalarField d = divergence(g, 0.5);
  auto dx = [&](std::size_t y, std::size_t x) {
    if (x == 0) return g.gx(y, 1) - g.gx(y, 0);
    if (x == 7) return g.gx(y, 7) - g.gx(y, 6);
    return (g.gx(y, x + 1) - g.gx(y, x - 1)) / 2.0;
  };
  auto dy = [&](std::size_t y, std::size_t x) {
    if (y == 0) return g.gy(1, x) - g.gy(0, x);
    if (y == 6) return g.gy(6, x) - g.gy(5, x);
    return (g.gy(y + 1, x) - g.gy(y - 1, x)) / 2.0;
  };
  for (std::size_t y = 0; y < 7; ++y)
    for (std::size_t x = 0; x < 8; ++x) EXPECT_NEAR(d(y, x), (dx(y, x) + dy(y, x)) / 0.5, 1e-12);
}

TEST(Integrate, ZeroFieldGivesZeroDepth) {
  const DepthMap z = integrate_gradients(zero_field(16, 20));
  for (double v : z.values()) EXPECT_EQ(v, 0.0);
}

TEST(Integrate, RecoversDome) {
  const DepthMap truth = dome(64, 64, 1.0, 20.0);
  const GradientField g = gelsim::depth_to_gradients(truth, 1.0);
  const DepthMap z = integrate_gradients(g);
  EXPECT_LT(relative_rmse(z, truth), 1e-2);
}

TEST(Integrate, RecoversDomeOnOddGrid) {
  // Odd interior sizes on both axes: one checkerboard mode is unobservable.
  const DepthMap truth = dome(63, 65, 1.0, 20.0);
  const DepthMap z = integrate_gradients(gelsim::depth_to_gradients(truth, 1.0));
  EXPECT_LT(relative_rmse(z, truth), 1e-2);
}

TEST(Integrate, RecoversRenderedProbes) {
  const SensorConfig c = default_sensor_config(0);
  const gelsim::Dataset ds = gelsim::generate_dataset(c, 8, 21, gelsim::InputMode::Diff);
  for (const auto& e : ds.entries) {
    const DepthMap z = integrate_gradients(e.truth, BoundaryCondition::DirichletZero, c.pixel_pitch_mm);
    EXPECT_LT(relative_rmse(z, e.depth), 2e-2) << gelsim::to_string(e.indenter.shape);
  }
}

TEST(Integrate, AgreesWithIterativeSolver) {
  const GradientField g = random_gradients(12, 16, 4);
  const DepthMap fast = integrate_gradients(g, BoundaryCondition::DirichletZero, 0.3);
  const DepthMap slow = gauss_seidel(g, 0.3, 20000);
  for (std::size_t i = 0; i < fast.values().size(); ++i) EXPECT_NEAR(fast.values()[i], slow.values()[i], 1e-9);
}

TEST(Integrate, IsLinear) {
  const GradientField a = random_gradients(20, 24, 1), b = random_gradients(20, 24, 2);
  const double alpha = 0.7, beta = -1.3;
  std::vector<double> gx(a.gx().size()), gy(a.gy().size());
  for (std::size_t i = 0; i < gx.size(); ++i) {
    gx[i] = alpha * a.gx()[i] + beta * b.gx()[i];
    gy[i] = alpha * a.gy()[i] + beta * b.gy()[i];
  }
  const DepthMap za = integrate_gradients(a), zb = integrate_gradients(b);
  const DepthMap zc = integrate_gradients(GradientField(20, 24, gx, gy));
  for (std::size_t i = 0; i < zc.values().size(); ++i)
    EXPECT_NEAR(zc.values()[i], alpha * za.values()[i] + beta * zb.values()[i], 1e-9);
}

TEST(Integrate, SatisfiesDiscretePoissonEquation) {
  const double pitch = 0.1;
  const GradientField g = random_gradients(30, 26, 9);
  const DepthMap z = integrate_gradients(g, BoundaryCondition::DirichletZero, pitch);
  EXPECT_LT(poisson_residual(g, z, pitch), 1e-6);
  for (std::size_t x = 0; x < 26; ++x) {
    EXPECT_EQ(z(0, x), 0.0);
    EXPECT_EQ(z(29, x), 0.0);
  }
}

TEST(Integrate, LargeGridIsFast) {
  const GradientField g = random_gradients(256, 256, 5);
  const auto t0 = std::chrono::steady_clock::now();
  const DepthMap z = integrate_gradients(g);
  const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  EXPECT_LT(s, 1.0);
  EXPECT_EQ(z.height(), 256u);
}

TEST(Integrate, OverflowingDivergenceIsRejected) {
  const double big = std::numeric_limits<double>::max();
  std::vector<double> gx(25, 0.0), gy(25, 0.0);
  gx[12] = big;
  gx[14] = -big;
  EXPECT_THROW(integrate_gradients(GradientField(5, 5, gx, gy)), InvalidField);
}

TEST(Integrate, TooSmallGridIsRejected) { EXPECT_THROW(integrate_gradients(zero_field(2, 2)), DimensionMismatch); }
