#include "rdseg/eed.hpp"

#include <algorithm>
#include <cmath>

namespace rdseg {

void validate_params(const EedParams& p) {
  if (p.sigma < 0.0) throw std::invalid_argument("EedParams: sigma must be >= 0");
  if (p.rho < 0.0) throw std::invalid_argument("EedParams: rho must be >= 0");
  if (p.lambda <= 0.0) throw std::invalid_argument("EedParams: lambda must be > 0");
  if (p.tau <= 0.0 || p.tau > 0.2) throw std::invalid_argument("EedParams: tau must be in (0, 0.2]");
  if (p.steps < 0) throw std::invalid_argument("EedParams: steps must be >= 0");
}

double auto_lambda(const Grid& image) {
  const double range = max_value(image) - min_value(image);
  return std::max(1e-6, 0.05 * range);
}

namespace {

// Whole-sample symmetric reflection: ... 2 1 0 | 0 1 2 ... | n-1 n-1 n-2 ...
int reflect(int idx, int n) {
  while (idx < 0 || idx >= n) {
    if (idx < 0) idx = -idx - 1;
    if (idx >= n) idx = 2 * n - 1 - idx;
  }
  return idx;
}

std::vector<double> gaussian_kernel(double scale) {
  const int radius = static_cast<int>(std::ceil(3.0 * scale));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * (static_cast<double>(i) * i) / (scale * scale));
    k[static_cast<std::size_t>(i + radius)] = v;
    total += v;
  }
  for (auto& v : k) v /= total;
  return k;
}

}  // namespace

Grid gaussian_smooth(const Grid& image, double scale) {
  if (scale < 0.0) throw std::invalid_argument("gaussian_smooth: scale must be >= 0");
  if (scale == 0.0 || image.size() == 0) return image;
  const auto kernel = gaussian_kernel(scale);
  const int radius = static_cast<int>(kernel.size() / 2);
  if (radius == 0) return image;

  Grid tmp(image.h, image.w);
  for (int i = 0; i < image.h; ++i) {
    for (int j = 0; j < image.w; ++j) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * image.at(i, reflect(j + k, image.w));
      }
      tmp.at(i, j) = acc;
    }
  }
  Grid out(image.h, image.w);
  for (int i = 0; i < image.h; ++i) {
    for (int j = 0; j < image.w; ++j) {
      double acc = 0.0;
      for (int k = -radius; k <= radius; ++k) {
        acc += kernel[static_cast<std::size_t>(k + radius)] * tmp.at(reflect(i + k, image.h), j);
      }
      out.at(i, j) = acc;
    }
  }
  return out;
}

SymmetricField structure_tensor(const Grid& image, double sigma, double rho) {
  const Grid smoothed = gaussian_smooth(image, sigma);
  const int h = image.h, w = image.w;

  Grid gx(h, w), gy(h, w);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      if (w == 1) {
        gx.at(i, j) = 0.0;
      } else if (j == 0) {
        gx.at(i, j) = smoothed.at(i, 1) - smoothed.at(i, 0);
      } else if (j == w - 1) {
        gx.at(i, j) = smoothed.at(i, w - 1) - smoothed.at(i, w - 2);
      } else {
        gx.at(i, j) = 0.5 * (smoothed.at(i, j + 1) - smoothed.at(i, j - 1));
      }
      if (h == 1) {
        gy.at(i, j) = 0.0;
      } else if (i == 0) {
        gy.at(i, j) = smoothed.at(1, j) - smoothed.at(0, j);
      } else if (i == h - 1) {
        gy.at(i, j) = smoothed.at(h - 1, j) - smoothed.at(h - 2, j);
      } else {
        gy.at(i, j) = 0.5 * (smoothed.at(i + 1, j) - smoothed.at(i - 1, j));
      }
    }
  }

  Grid jxx(h, w), jxy(h, w), jyy(h, w);
  for (std::size_t i = 0; i < jxx.size(); ++i) {
    jxx.v[i] = gx.v[i] * gx.v[i];
    jxy.v[i] = gx.v[i] * gy.v[i];
    jyy.v[i] = gy.v[i] * gy.v[i];
  }
  jxx = gaussian_smooth(jxx, rho);
  jxy = gaussian_smooth(jxy, rho);
  jyy = gaussian_smooth(jyy, rho);

  SymmetricField out(h, w);
  out.xx = std::move(jxx.v);
  out.xy = std::move(jxy.v);
  out.yy = std::move(jyy.v);
  return out;
}

Eigen2x2 eigen2x2(double a, double b, double c) {
  Eigen2x2 e;
  if (std::abs(b) < 1e-12) {
    if (a >= c) {
      e.mu1 = a;
      e.mu2 = c;
      e.v1x = 1.0;
      e.v1y = 0.0;
    } else {
      e.mu1 = c;
      e.mu2 = a;
      e.v1x = 0.0;
      e.v1y = 1.0;
    }
    return e;
  }
  const double half_trace = 0.5 * (a + c);
  const double root = std::sqrt(0.25 * (a - c) * (a - c) + b * b);
  e.mu1 = half_trace + root;
  e.mu2 = half_trace - root;

  // (A - mu1 I) v = 0 gives two proportional candidates; take the better
  // conditioned one.
  const double c1x = b, c1y = e.mu1 - a;
  const double c2x = e.mu1 - c, c2y = b;
  const double n1 = std::hypot(c1x, c1y);
  const double n2 = std::hypot(c2x, c2y);
  if (n1 >= n2) {
    e.v1x = c1x / n1;
    e.v1y = c1y / n1;
  } else {
    e.v1x = c2x / n2;
    e.v1y = c2y / n2;
  }
  return e;
}

double edge_diffusivity(double s, double lambda) {
  if (s <= 0.0) return 1.0;
  const double ratio = s / (lambda * lambda);
  return 1.0 - std::exp(-3.31488 / (ratio * ratio * ratio * ratio));
}

DiffusionField build_diffusion_tensor(const SymmetricField& structure, double lambda) {
  if (lambda <= 0.0) throw std::invalid_argument("build_diffusion_tensor: lambda must be > 0");
  DiffusionField d(structure.h, structure.w);
  for (std::size_t i = 0; i < structure.size(); ++i) {
    const Eigen2x2 e = eigen2x2(structure.xx[i], structure.xy[i], structure.yy[i]);
    const double across = edge_diffusivity(e.mu1, lambda);
    const double along = 1.0;
    const double v2x = -e.v1y, v2y = e.v1x;
    d.xx[i] = across * e.v1x * e.v1x + along * v2x * v2x;
    d.xy[i] = across * e.v1x * e.v1y + along * v2x * v2y;
    d.yy[i] = across * e.v1y * e.v1y + along * v2y * v2y;
  }
  return d;
}

Grid diffuse_step(const Grid& image, const DiffusionField& field, double tau) {
  if (field.h != image.h || field.w != image.w) {
    throw std::invalid_argument("diffuse_step: field extents do not match image");
  }
  if (tau <= 0.0 || tau > 0.2) throw std::invalid_argument("diffuse_step: tau must be in (0, 0.2]");
  const int h = image.h, w = image.w;
  const std::size_t total = image.size();

  // Split D into nonnegative 1-D diffusivities along x, y and the two
  // diagonals. |xy| is limited to min(xx, yy), the admissibility condition
  // of the split.
  std::vector<double> ax(total), ay(total), bp(total), bm(total);
  for (std::size_t i = 0; i < total; ++i) {
    const double a = std::max(field.xx[i], 0.0);
    const double c = std::max(field.yy[i], 0.0);
    const double lim = std::min(a, c);
    const double b = std::clamp(field.xy[i], -lim, lim);
    ax[i] = a - std::abs(b);
    ay[i] = c - std::abs(b);
    if (b >= 0.0) {
      bp[i] = 2.0 * b;
      bm[i] = 0.0;
    } else {
      bp[i] = 0.0;
      bm[i] = -2.0 * b;
    }
  }

  Grid out = image;
  auto idx = [w](int i, int j) { return static_cast<std::size_t>(i) * w + j; };

  // Horizontal interfaces.
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j + 1 < w; ++j) {
      const std::size_t p = idx(i, j), q = idx(i, j + 1);
      const double f = tau * 0.5 * (ax[p] + ax[q]) * (image.v[q] - image.v[p]);
      out.v[p] += f;
      out.v[q] -= f;
    }
  }
  // Vertical interfaces.
  for (int i = 0; i + 1 < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const std::size_t p = idx(i, j), q = idx(i + 1, j);
      const double f = tau * 0.5 * (ay[p] + ay[q]) * (image.v[q] - image.v[p]);
      out.v[p] += f;
      out.v[q] -= f;
    }
  }
  // Diagonal interfaces; the extra 1/2 is the squared diagonal spacing.
  for (int i = 0; i + 1 < h; ++i) {
    for (int j = 0; j + 1 < w; ++j) {
      const std::size_t p = idx(i, j), q = idx(i + 1, j + 1);
      const double f = tau * 0.25 * (bp[p] + bp[q]) * (image.v[q] - image.v[p]);
      out.v[p] += f;
      out.v[q] -= f;
    }
  }
  for (int i = 1; i < h; ++i) {
    for (int j = 0; j + 1 < w; ++j) {
      const std::size_t p = idx(i, j), q = idx(i - 1, j + 1);
      const double f = tau * 0.25 * (bm[p] + bm[q]) * (image.v[q] - image.v[p]);
      out.v[p] += f;
      out.v[q] -= f;
    }
  }
  return out;
}

Grid eed_filter(const Grid& image, const EedParams& params) {
  validate_params(params);
  Grid u = image;
  for (int step = 0; step < params.steps; ++step) {
    const SymmetricField j = structure_tensor(u, params.sigma, params.rho);
    const DiffusionField d = build_diffusion_tensor(j, params.lambda);
    u = diffuse_step(u, d, params.tau);
  }
  return u;
}

}  // namespace rdseg
