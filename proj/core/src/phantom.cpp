#include "rdseg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

#include "rdseg/image_io.hpp"

namespace rdseg {

namespace {

struct Ellipse {
  double row, col;      // center
  double semi_r, semi_c;

  [[nodiscard]] bool contains(double i, double j) const {
    const double dr = (i - row) / semi_r;
    const double dc = (j - col) / semi_c;
    return dr * dr + dc * dc <= 1.0;
  }
};

constexpr double kBackground = 0.45;
constexpr double kBody = 0.85;
constexpr double kLung = 0.20;
constexpr double kLesionAmplitude = 0.50;
constexpr double kNoiseSigma = 0.02;
constexpr int kPlacementRetries = 500;

}  // namespace

PhantomSample generate_phantom(const PhantomSpec& spec) {
  if (spec.size < 16 || spec.size % 16 != 0) {
    throw std::invalid_argument("generate_phantom: size must be a positive multiple of 16");
  }
  if (spec.lesion_count < 0) {
    throw std::invalid_argument("generate_phantom: lesion_count must be >= 0");
  }
  const int s = spec.size;
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto jitter = [&](double amount) { return 1.0 + amount * (2.0 * unit(rng) - 1.0); };

  const Ellipse body{0.52 * s, 0.50 * s, 0.36 * s * jitter(0.01), 0.42 * s * jitter(0.01)};
  const Ellipse lungs[2] = {
      Ellipse{(0.50 + 0.01 * (2.0 * unit(rng) - 1.0)) * s, 0.30 * s, 0.27 * s * jitter(0.01),
              0.175 * s * jitter(0.01)},
      Ellipse{(0.50 + 0.01 * (2.0 * unit(rng) - 1.0)) * s, 0.70 * s, 0.27 * s * jitter(0.01),
              0.175 * s * jitter(0.01)},
  };

  PhantomSample out;
  out.image = Grid(s, s);
  out.lung = Mask(s, s);
  out.infection = Mask(s, s);

  for (int i = 0; i < s; ++i) {
    for (int j = 0; j < s; ++j) {
      double value = kBackground;
      const bool in_body = body.contains(i, j);
      if (in_body) value = kBody;
      bool in_lung = false;
      for (const auto& lung : lungs) {
        in_lung = in_lung || (in_body && lung.contains(i, j));
      }
      if (in_lung) {
        value = kLung;
        out.lung.at(i, j) = 1;
      }
      out.image.at(i, j) = value;
    }
  }

  std::uniform_real_distribution<double> radius_dist(0.105 * s, 0.12 * s);
  for (int lesion = 0; lesion < spec.lesion_count; ++lesion) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementRetries && !placed; ++attempt) {
      const Ellipse& lung = lungs[rng() % 2];
      const double ci = lung.row + (2.0 * unit(rng) - 1.0) * lung.semi_r;
      const double cj = lung.col + (2.0 * unit(rng) - 1.0) * lung.semi_c;
      const double radius = radius_dist(rng);

      const int i0 = std::max(0, static_cast<int>(std::floor(ci - radius - 2.0)));
      const int i1 = std::min(s - 1, static_cast<int>(std::ceil(ci + radius + 2.0)));
      const int j0 = std::max(0, static_cast<int>(std::floor(cj - radius - 2.0)));
      const int j1 = std::min(s - 1, static_cast<int>(std::ceil(cj + radius + 2.0)));

      // the disc plus a two-pixel margin must sit inside the lung
      bool inside = true;
      for (int i = i0; i <= i1 && inside; ++i) {
        for (int j = j0; j <= j1 && inside; ++j) {
          const double d = std::hypot(i - ci, j - cj);
          if (d <= radius + 2.0 && !out.lung.at(i, j)) inside = false;
        }
      }
      if (!inside) continue;

      // Gaussian profile truncated well inside one sigma: the interior stays
      // nearly flat and the rim keeps a clear intensity step over the lung
      // background.
      const double falloff = 1.4 * radius;
      for (int i = i0; i <= i1; ++i) {
        for (int j = j0; j <= j1; ++j) {
          const double d = std::hypot(i - ci, j - cj);
          if (d <= radius) {
            out.infection.at(i, j) = 1;
            out.image.at(i, j) += kLesionAmplitude * std::exp(-0.5 * (d * d) / (falloff * falloff));
          }
        }
      }
      placed = true;
    }
    if (!placed) {
      throw std::runtime_error("generate_phantom: could not place lesion " +
                               std::to_string(lesion + 1) + " after " +
                               std::to_string(kPlacementRetries) + " attempts");
    }
  }

  std::normal_distribution<double> noise(0.0, kNoiseSigma);
  for (auto& v : out.image.v) v = std::clamp(v + noise(rng), 0.0, 1.0);
  return out;
}

SampleRecord write_phantom_files(const std::filesystem::path& dir, const std::string& id,
                                 const PhantomSample& sample, const std::string& split) {
  std::filesystem::create_directories(dir);
  const std::string image_name = id + ".imgf32";
  const std::string lung_name = id + "_lung.pgm";
  const std::string infection_name = id + "_infection.pgm";
  write_raster_imgf32(dir / image_name, sample.image);
  write_mask(dir / lung_name, sample.lung);
  write_mask(dir / infection_name, sample.infection);

  SampleRecord r;
  r.id = id;
  r.image_path = image_name;
  r.lung_mask_path = lung_name;
  r.infection_mask_path = infection_name;
  r.split = split;
  return r;
}

}  // namespace rdseg
