#pragma once

#include <stdexcept>
#include <vector>

#include "rdseg/grid.hpp"

namespace rdseg {

/// Edge-enhancing diffusion parameters. lambda separates "noise" gradients
/// (smoothed away) from "edge" gradients (preserved); tau is limited to 0.2,
/// inside the stability bound of the explicit scheme.
struct EedParams {
  double sigma = 1.0;   // gradient pre-smoothing scale, pixels
  double rho = 2.0;     // structure-tensor integration scale, pixels
  double lambda = 0.05; // edge-contrast threshold, intensity units
  double tau = 0.15;    // explicit Euler time step
  int steps = 30;
};

void validate_params(const EedParams& p);

/// 5% of the intensity range, floored so the threshold stays positive on
/// constant images.
double auto_lambda(const Grid& image);

/// Per-pixel symmetric 2x2 matrix field [[xx, xy], [xy, yy]]. "x" is the
/// column direction, "y" the row direction.
struct SymmetricField {
  int h = 0;
  int w = 0;
  std::vector<double> xx, xy, yy;

  SymmetricField() = default;
  SymmetricField(int height, int width)
      : h(height),
        w(width),
        xx(static_cast<std::size_t>(height) * width, 0.0),
        xy(static_cast<std::size_t>(height) * width, 0.0),
        yy(static_cast<std::size_t>(height) * width, 0.0) {}

  [[nodiscard]] std::size_t size() const { return xx.size(); }
};

using DiffusionField = SymmetricField;

/// Separable Gaussian convolution, kernel truncated at +-ceil(3*scale),
/// normalized, symmetric boundary reflection. scale 0 is the identity.
Grid gaussian_smooth(const Grid& image, double scale);

/// Outer product of the sigma-smoothed gradient, integrated at scale rho.
/// Central differences inside, one-sided at the borders.
SymmetricField structure_tensor(const Grid& image, double sigma, double rho);

struct Eigen2x2 {
  double mu1 = 0.0;  // larger eigenvalue
  double mu2 = 0.0;
  double v1x = 1.0;  // unit eigenvector for mu1; v2 = (-v1y, v1x)
  double v1y = 0.0;
};

/// Closed-form eigendecomposition of [[a, b], [b, c]]. Near-diagonal input
/// (|b| < 1e-12) returns axis-aligned eigenvectors.
Eigen2x2 eigen2x2(double a, double b, double c);

/// 1 for s <= 0, else 1 - exp(-3.31488 / (s / lambda^2)^4). Values in (0, 1].
double edge_diffusivity(double s, double lambda);

/// Across-edge eigenvalue edge_diffusivity(mu1), along-edge eigenvalue 1,
/// eigenvectors of the structure tensor.
DiffusionField build_diffusion_tensor(const SymmetricField& structure, double lambda);

/// One explicit Euler step of du/dt = div(D grad u).
///
/// The operator is split into four one-dimensional diffusions (axes plus the
/// two diagonals) with nonnegative coefficients; the off-diagonal entry is
/// limited to min(xx, yy) beforehand, which keeps the split admissible and
/// the stencil a convex combination for tau <= 0.2. Fluxes live on cell
/// interfaces and are added/subtracted pairwise, so the pixel mean is
/// preserved exactly and boundaries are zero-flux.
Grid diffuse_step(const Grid& image, const DiffusionField& field, double tau);

/// steps iterations of structure_tensor -> build_diffusion_tensor ->
/// diffuse_step, recomputing the tensor from the evolving image.
Grid eed_filter(const Grid& image, const EedParams& params);

}  // namespace rdseg
