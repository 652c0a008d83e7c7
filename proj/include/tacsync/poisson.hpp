#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include <Eigen/Dense>

#include "tacsync/core.hpp"
#include "tacsync/error.hpp"

namespace tacsync::poisson {

// Depth pinned to zero on the image border. The only supported kind.
enum class BoundaryCondition { DirichletZero };

/// d(gx)/dx + d(gy)/dy with the same stencil as depth_to_gradients: central
/// differences inside, one-sided differences on the border.
inline ScalarField divergence(const GradientField& g, double pixel_pitch_mm = 1.0) {
  const std::size_t h = g.height(), w = g.width();
  if (h < 3 || w < 3) throw DimensionMismatch("divergence needs at least 3 pixels per axis");
  if (!(pixel_pitch_mm > 0.0)) throw InvalidArgument("pixel pitch must be positive");
  ScalarField div{h, w, std::vector<double>(h * w)};
  const double inv = 1.0 / pixel_pitch_mm;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double dgx, dgy;
      if (x == 0) dgx = g.gx(y, 1) - g.gx(y, 0);
      else if (x == w - 1) dgx = g.gx(y, w - 1) - g.gx(y, w - 2);
      else dgx = 0.5 * (g.gx(y, x + 1) - g.gx(y, x - 1));
      if (y == 0) dgy = g.gy(1, x) - g.gy(0, x);
      else if (y == h - 1) dgy = g.gy(h - 1, x) - g.gy(h - 2, x);
      else dgy = 0.5 * (g.gy(y + 1, x) - g.gy(y - 1, x));
      div(y, x) = (dgx + dgy) * inv;
    }
  }
  return div;
}

/// Discrete Laplacian matched to the gradient stencil: div(grad z) with the
/// central/one-sided differences of depth_to_gradients. For a depth map that
/// is zero on the border this is the 2h-wide five-point stencil with odd
/// reflection at the border. Border entries are zero.
inline ScalarField laplacian(const DepthMap& z, double pixel_pitch_mm = 1.0) {
  const std::size_t h = z.height(), w = z.width();
  if (h < 3 || w < 3) throw DimensionMismatch("laplacian needs at least 3 pixels per axis");
  if (!(pixel_pitch_mm > 0.0)) throw InvalidArgument("pixel pitch must be positive");
  std::vector<double> gx(h * w), gy(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      if (x == 0) gx[y * w + x] = z(y, 1) - z(y, 0);
      else if (x == w - 1) gx[y * w + x] = z(y, w - 1) - z(y, w - 2);
      else gx[y * w + x] = 0.5 * (z(y, x + 1) - z(y, x - 1));
      if (y == 0) gy[y * w + x] = z(1, x) - z(0, x);
      else if (y == h - 1) gy[y * w + x] = z(h - 1, x) - z(h - 2, x);
      else gy[y * w + x] = 0.5 * (z(y + 1, x) - z(y - 1, x));
      gx[y * w + x] /= pixel_pitch_mm;
      gy[y * w + x] /= pixel_pitch_mm;
    }
  ScalarField out = divergence(GradientField(h, w, std::move(gx), std::move(gy)), pixel_pitch_mm);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      if (y == 0 || x == 0 || y == h - 1 || x == w - 1) out(y, x) = 0.0;
  return out;
}

namespace detail {

// S[k][j] = sin(pi (j+1)(k+1) / (n+1)). S is symmetric and S*S = (n+1)/2 I.
inline Eigen::MatrixXd dst1_matrix(std::size_t n) {
  Eigen::MatrixXd s(n, n);
  const double step = std::numbers::pi / static_cast<double>(n + 1);
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t j = 0; j < n; ++j)
      s(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
          std::sin(step * static_cast<double>((j + 1) * (k + 1)));
  return s;
}

}  // namespace detail

/// Integrates a gradient field into depth by solving laplacian(z) = div(g) on
/// the interior with z = 0 on the border. That operator is diagonalised by the
/// type-I discrete sine transform along each axis (mode k of n has eigenvalue
/// -sin^2(pi k / (n + 1)) / h^2), so the solve is: transform, divide, transform
/// back. Gradients of a border-zero depth map are integrated back exactly.
/// When both interior sizes are odd one mode has eigenvalue zero; its
/// coefficient is set to zero.
inline DepthMap integrate_gradients(const GradientField& g,
                                    BoundaryCondition bc = BoundaryCondition::DirichletZero,
                                    double pixel_pitch_mm = 1.0) {
  (void)bc;
  const std::size_t h = g.height(), w = g.width();
  if (h < 3 || w < 3) throw DimensionMismatch("integrate_gradients needs at least 3 pixels per axis");
  const ScalarField div = divergence(g, pixel_pitch_mm);
  for (double v : div.values)
    if (!std::isfinite(v)) throw InvalidField("divergence of the gradient field is not finite");

  const auto ny = static_cast<Eigen::Index>(h - 2), nx = static_cast<Eigen::Index>(w - 2);
  Eigen::MatrixXd f(ny, nx);
  for (Eigen::Index y = 0; y < ny; ++y)
    for (Eigen::Index x = 0; x < nx; ++x)
      f(y, x) = div(static_cast<std::size_t>(y + 1), static_cast<std::size_t>(x + 1));

  const Eigen::MatrixXd sy = detail::dst1_matrix(static_cast<std::size_t>(ny));
  const Eigen::MatrixXd sx = detail::dst1_matrix(static_cast<std::size_t>(nx));
  Eigen::MatrixXd coef = sy * f * sx;

  const double inv_h2 = 1.0 / (pixel_pitch_mm * pixel_pitch_mm);
  auto eig = [](Eigen::Index k, Eigen::Index n) {
    const double t = std::sin(std::numbers::pi * static_cast<double>(k + 1) / static_cast<double>(n + 1));
    return -t * t;
  };
  for (Eigen::Index ky = 0; ky < ny; ++ky) {
    const double ly = eig(ky, ny);
    for (Eigen::Index kx = 0; kx < nx; ++kx) {
      const double l = (eig(kx, nx) + ly) * inv_h2;
      coef(ky, kx) = std::abs(l) * pixel_pitch_mm * pixel_pitch_mm < 1e-12 ? 0.0 : coef(ky, kx) / l;
    }
  }
  const double scale = (2.0 / static_cast<double>(ny + 1)) * (2.0 / static_cast<double>(nx + 1));
  const Eigen::MatrixXd interior = scale * (sy * coef * sx);

  std::vector<double> z(h * w, 0.0);
  for (Eigen::Index y = 0; y < ny; ++y)
    for (Eigen::Index x = 0; x < nx; ++x)
      z[static_cast<std::size_t>(y + 1) * w + static_cast<std::size_t>(x + 1)] = interior(y, x);
  return DepthMap(h, w, std::move(z));
}

}  // namespace tacsync::poisson
