#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "rdseg/tensor.hpp"

namespace rdseg {

/// Single-channel image raster, row-major, double precision in memory.
struct Grid {
  int h = 0;
  int w = 0;
  std::vector<double> v;

  Grid() = default;
  Grid(int height, int width) : h(height), w(width) {
    if (height < 0 || width < 0) throw std::invalid_argument("Grid: negative extent");
    v.assign(static_cast<std::size_t>(height) * width, 0.0);
  }
  Grid(int height, int width, std::vector<double> values) : h(height), w(width), v(std::move(values)) {
    if (v.size() != static_cast<std::size_t>(h) * w) {
      throw std::invalid_argument("Grid: data length does not match extents");
    }
  }

  double& at(int i, int j) { return v[static_cast<std::size_t>(i) * w + j]; }
  double at(int i, int j) const { return v[static_cast<std::size_t>(i) * w + j]; }
  [[nodiscard]] std::size_t size() const { return v.size(); }
};

/// Binary mask, 0 = background, 1 = foreground.
struct Mask {
  int h = 0;
  int w = 0;
  std::vector<std::uint8_t> v;

  Mask() = default;
  Mask(int height, int width) : h(height), w(width) {
    if (height < 0 || width < 0) throw std::invalid_argument("Mask: negative extent");
    v.assign(static_cast<std::size_t>(height) * width, 0);
  }

  std::uint8_t& at(int i, int j) { return v[static_cast<std::size_t>(i) * w + j]; }
  std::uint8_t at(int i, int j) const { return v[static_cast<std::size_t>(i) * w + j]; }
  [[nodiscard]] std::size_t size() const { return v.size(); }

  [[nodiscard]] std::int64_t count() const {
    std::int64_t n = 0;
    for (auto b : v) n += b != 0;
    return n;
  }
  [[nodiscard]] bool empty_mask() const { return count() == 0; }
};

/// Bilinear resampling with pixel-center alignment and edge clamping.
Grid resize_bilinear(const Grid& in, int out_h, int out_w);

/// Nearest-neighbour resampling for label masks.
Mask resize_nearest(const Mask& in, int out_h, int out_w);

/// Zero mean, unit variance over the whole patch; all zeros when the
/// standard deviation falls below 1e-8.
Grid normalize_patch(const Grid& in);

double min_value(const Grid& g);
double max_value(const Grid& g);
double mean_value(const Grid& g);

Tensor4<float> grid_to_tensor(const Grid& g);
Grid tensor_to_grid(const Tensor4<float>& t, int batch = 0, int channel = 0);
Tensor4<float> mask_to_tensor(const Mask& m);

Mask threshold_probabilities(const Grid& prob, double threshold);

}  // namespace rdseg
