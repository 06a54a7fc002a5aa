#include "rdseg/grid.hpp"

#include <algorithm>
#include <cmath>

namespace rdseg {

Grid resize_bilinear(const Grid& in, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: bad target size");
  if (in.h < 1 || in.w < 1) throw std::invalid_argument("resize_bilinear: empty source");
  if (in.h == out_h && in.w == out_w) return in;

  Grid out(out_h, out_w);
  const double sy = static_cast<double>(in.h) / out_h;
  const double sx = static_cast<double>(in.w) / out_w;
  for (int i = 0; i < out_h; ++i) {
    const double src_y = std::clamp((i + 0.5) * sy - 0.5, 0.0, static_cast<double>(in.h - 1));
    const int y0 = static_cast<int>(src_y);
    const int y1 = std::min(y0 + 1, in.h - 1);
    const double fy = src_y - y0;
    for (int j = 0; j < out_w; ++j) {
      const double src_x = std::clamp((j + 0.5) * sx - 0.5, 0.0, static_cast<double>(in.w - 1));
      const int x0 = static_cast<int>(src_x);
      const int x1 = std::min(x0 + 1, in.w - 1);
      const double fx = src_x - x0;
      const double top = in.at(y0, x0) * (1.0 - fx) + in.at(y0, x1) * fx;
      const double bot = in.at(y1, x0) * (1.0 - fx) + in.at(y1, x1) * fx;
      out.at(i, j) = top * (1.0 - fy) + bot * fy;
    }
  }
  return out;
}

Mask resize_nearest(const Mask& in, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_nearest: bad target size");
  if (in.h < 1 || in.w < 1) throw std::invalid_argument("resize_nearest: empty source");
  if (in.h == out_h && in.w == out_w) return in;

  Mask out(out_h, out_w);
  const double sy = static_cast<double>(in.h) / out_h;
  const double sx = static_cast<double>(in.w) / out_w;
  for (int i = 0; i < out_h; ++i) {
    const int src_y = std::clamp(static_cast<int>((i + 0.5) * sy), 0, in.h - 1);
    for (int j = 0; j < out_w; ++j) {
      const int src_x = std::clamp(static_cast<int>((j + 0.5) * sx), 0, in.w - 1);
      out.at(i, j) = in.at(src_y, src_x);
    }
  }
  return out;
}

Grid normalize_patch(const Grid& in) {
  if (in.size() == 0) return in;
  double mean = 0.0;
  for (double x : in.v) mean += x;
  mean /= static_cast<double>(in.size());
  double var = 0.0;
  for (double x : in.v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(in.size());
  const double std_dev = std::sqrt(var);

  Grid out(in.h, in.w);
  if (std_dev < 1e-8) return out;  // degenerate patch maps to all zeros
  for (std::size_t i = 0; i < in.size(); ++i) out.v[i] = (in.v[i] - mean) / std_dev;
  return out;
}

double min_value(const Grid& g) { return *std::min_element(g.v.begin(), g.v.end()); }
double max_value(const Grid& g) { return *std::max_element(g.v.begin(), g.v.end()); }

double mean_value(const Grid& g) {
  double acc = 0.0;
  for (double x : g.v) acc += x;
  return acc / static_cast<double>(g.size());
}

Tensor4<float> grid_to_tensor(const Grid& g) {
  Tensor4<float> t({1, 1, g.h, g.w});
  for (std::size_t i = 0; i < g.size(); ++i) t.data[i] = static_cast<float>(g.v[i]);
  return t;
}

Grid tensor_to_grid(const Tensor4<float>& t, int batch, int channel) {
  Grid g(t.shape.h, t.shape.w);
  for (int i = 0; i < t.shape.h; ++i) {
    for (int j = 0; j < t.shape.w; ++j) g.at(i, j) = t.at(batch, channel, i, j);
  }
  return g;
}

Tensor4<float> mask_to_tensor(const Mask& m) {
  Tensor4<float> t({1, 1, m.h, m.w});
  for (std::size_t i = 0; i < m.size(); ++i) t.data[i] = m.v[i] ? 1.0f : 0.0f;
  return t;
}

Mask threshold_probabilities(const Grid& prob, double threshold) {
  Mask m(prob.h, prob.w);
  for (std::size_t i = 0; i < prob.size(); ++i) m.v[i] = prob.v[i] > threshold ? 1 : 0;
  return m;
}

}  // namespace rdseg
