#include "rdseg/pipeline.hpp"

#include <algorithm>
#include <queue>
#include <stdexcept>
#include <vector>

namespace rdseg {

namespace {

// 4-connected component labels in scan order; label 0 is background.
std::vector<int> label_components(const Mask& m, int& num_labels) {
  std::vector<int> labels(m.size(), 0);
  num_labels = 0;
  std::vector<std::pair<int, int>> stack;
  for (int i = 0; i < m.h; ++i) {
    for (int j = 0; j < m.w; ++j) {
      if (!m.at(i, j) || labels[static_cast<std::size_t>(i) * m.w + j] != 0) continue;
      const int label = ++num_labels;
      stack.push_back({i, j});
      labels[static_cast<std::size_t>(i) * m.w + j] = label;
      while (!stack.empty()) {
        auto [y, x] = stack.back();
        stack.pop_back();
        const int dy[4] = {-1, 1, 0, 0};
        const int dx[4] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
          const int ny = y + dy[d], nx = x + dx[d];
          if (ny < 0 || ny >= m.h || nx < 0 || nx >= m.w) continue;
          auto& slot = labels[static_cast<std::size_t>(ny) * m.w + nx];
          if (m.at(ny, nx) && slot == 0) {
            slot = label;
            stack.push_back({ny, nx});
          }
        }
      }
    }
  }
  return labels;
}

// Background pixels unreachable from the border (4-connected) are holes.
void fill_holes(Mask& m) {
  if (m.h == 0 || m.w == 0) return;
  std::vector<std::uint8_t> outside(m.size(), 0);
  std::vector<std::pair<int, int>> stack;
  auto push_if_bg = [&](int y, int x) {
    const std::size_t i = static_cast<std::size_t>(y) * m.w + x;
    if (!m.v[i] && !outside[i]) {
      outside[i] = 1;
      stack.push_back({y, x});
    }
  };
  for (int j = 0; j < m.w; ++j) {
    push_if_bg(0, j);
    push_if_bg(m.h - 1, j);
  }
  for (int i = 0; i < m.h; ++i) {
    push_if_bg(i, 0);
    push_if_bg(i, m.w - 1);
  }
  while (!stack.empty()) {
    auto [y, x] = stack.back();
    stack.pop_back();
    if (y > 0) push_if_bg(y - 1, x);
    if (y + 1 < m.h) push_if_bg(y + 1, x);
    if (x > 0) push_if_bg(y, x - 1);
    if (x + 1 < m.w) push_if_bg(y, x + 1);
  }
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (!m.v[i] && !outside[i]) m.v[i] = 1;
  }
}

}  // namespace

LungPostprocess postprocess_lung(const Grid& prob, double threshold) {
  Mask bin = threshold_probabilities(prob, threshold);

  int num_labels = 0;
  const auto labels = label_components(bin, num_labels);
  if (num_labels == 0) return {Mask(prob.h, prob.w), true};

  std::vector<std::int64_t> area(static_cast<std::size_t>(num_labels) + 1, 0);
  for (int l : labels) ++area[static_cast<std::size_t>(l)];
  area[0] = 0;
  const std::int64_t largest = *std::max_element(area.begin(), area.end());

  Mask kept(prob.h, prob.w);
  for (std::size_t i = 0; i < kept.size(); ++i) {
    const int l = labels[i];
    kept.v[i] = (l != 0 && static_cast<double>(area[static_cast<std::size_t>(l)]) >=
                               0.10 * static_cast<double>(largest))
                    ? 1
                    : 0;
  }
  fill_holes(kept);
  return {std::move(kept), false};
}

RoiBox mask_bounding_box(const Mask& mask, int margin) {
  int r0 = mask.h, r1 = -1, c0 = mask.w, c1 = -1;
  for (int i = 0; i < mask.h; ++i) {
    for (int j = 0; j < mask.w; ++j) {
      if (!mask.at(i, j)) continue;
      r0 = std::min(r0, i);
      r1 = std::max(r1, i);
      c0 = std::min(c0, j);
      c1 = std::max(c1, j);
    }
  }
  if (r1 < 0) throw std::invalid_argument("mask_bounding_box: empty mask");
  r0 = std::max(0, r0 - margin);
  c0 = std::max(0, c0 - margin);
  r1 = std::min(mask.h - 1, r1 + margin);
  c1 = std::min(mask.w - 1, c1 + margin);
  return {r0, c0, r1 - r0 + 1, c1 - c0 + 1};
}

Grid crop_grid(const Grid& g, const RoiBox& box) {
  Grid out(box.rows, box.cols);
  for (int i = 0; i < box.rows; ++i) {
    for (int j = 0; j < box.cols; ++j) out.at(i, j) = g.at(box.row0 + i, box.col0 + j);
  }
  return out;
}

Mask crop_mask(const Mask& m, const RoiBox& box) {
  Mask out(box.rows, box.cols);
  for (int i = 0; i < box.rows; ++i) {
    for (int j = 0; j < box.cols; ++j) out.at(i, j) = m.at(box.row0 + i, box.col0 + j);
  }
  return out;
}

std::pair<Grid, RoiBox> crop_roi(const Grid& image, const Mask& lung_mask, int margin) {
  if (image.h != lung_mask.h || image.w != lung_mask.w) {
    throw std::invalid_argument("crop_roi: image and mask extents differ");
  }
  if (lung_mask.empty_mask()) throw std::invalid_argument("crop_roi: empty lung mask");
  const RoiBox box = mask_bounding_box(lung_mask, margin);
  return {crop_grid(image, box), box};
}

Mask uncrop(const Mask& roi_mask, const RoiBox& box, int full_h, int full_w) {
  if (roi_mask.h != box.rows || roi_mask.w != box.cols) {
    throw std::invalid_argument("uncrop: mask extents do not match the ROI box");
  }
  if (box.row0 < 0 || box.col0 < 0 || box.row0 + box.rows > full_h ||
      box.col0 + box.cols > full_w) {
    throw std::invalid_argument("uncrop: ROI box exceeds the target frame");
  }
  Mask out(full_h, full_w);
  for (int i = 0; i < box.rows; ++i) {
    for (int j = 0; j < box.cols; ++j) out.at(box.row0 + i, box.col0 + j) = roi_mask.at(i, j);
  }
  return out;
}

EedParams resolve_eed(const EedOptions& opts, const Grid& roi) {
  EedParams p = opts.params;
  if (opts.lambda_auto) p.lambda = auto_lambda(roi);
  validate_params(p);
  return p;
}

CascadeResult run_cascade(const Grid& image, const UnetModel<float>& lung_model,
                          const UnetModel<float>& infection_model, const CascadeOptions& opts) {
  for (double v : image.v) {
    if (!std::isfinite(v)) throw std::invalid_argument("run_cascade: non-finite input pixel");
  }

  const Tensor4<float> lung_in = grid_to_tensor(normalize_patch(image));
  const Grid lung_prob = tensor_to_grid(unet_forward_infer(lung_model, lung_in));
  LungPostprocess post = postprocess_lung(lung_prob, opts.threshold);

  CascadeResult result;
  result.lung_mask = std::move(post.mask);
  if (opts.keep_probabilities) result.lung_probability = lung_prob;

  if (post.empty_warning || result.lung_mask.empty_mask()) {
    result.infection_mask = Mask(image.h, image.w);
    result.lung_empty = true;
    return result;
  }

  auto [roi_image, box] = crop_roi(image, result.lung_mask, opts.roi_margin);
  result.roi_box = box;
  const Mask roi_lung = crop_mask(result.lung_mask, box);
  for (std::size_t i = 0; i < roi_image.size(); ++i) {
    if (!roi_lung.v[i]) roi_image.v[i] = 0.0;
  }

  const EedParams eed = resolve_eed(opts.eed, roi_image);
  Grid enhanced = eed_filter(roi_image, eed);
  // match the training preparation: out-of-lung pixels stay exactly zero
  for (std::size_t i = 0; i < enhanced.size(); ++i) {
    if (!roi_lung.v[i]) enhanced.v[i] = 0.0;
  }
  const Grid normalized = normalize_patch(enhanced);

  const int target = infection_model.config.input_size;
  const Grid resized = resize_bilinear(normalized, target, target);
  const Grid infection_prob =
      tensor_to_grid(unet_forward_infer(infection_model, grid_to_tensor(resized)));
  if (opts.keep_probabilities) result.infection_probability = infection_prob;

  Mask infection_small = threshold_probabilities(infection_prob, opts.threshold);
  Mask infection_roi = resize_nearest(infection_small, box.rows, box.cols);
  for (std::size_t i = 0; i < infection_roi.size(); ++i) {
    if (!roi_lung.v[i]) infection_roi.v[i] = 0;
  }
  result.infection_mask = uncrop(infection_roi, box, image.h, image.w);
  return result;
}

namespace {

bool is_boundary(const Mask& m, int i, int j) {
  if (!m.at(i, j)) return false;
  if (i == 0 || i == m.h - 1 || j == 0 || j == m.w - 1) return true;
  return !m.at(i - 1, j) || !m.at(i + 1, j) || !m.at(i, j - 1) || !m.at(i, j + 1);
}

}  // namespace

Grid overlay_boundaries(const Grid& image, const Mask& lung, const Mask& infection) {
  Grid out = image;
  for (int i = 0; i < image.h; ++i) {
    for (int j = 0; j < image.w; ++j) {
      if (is_boundary(lung, i, j)) out.at(i, j) = 0.0;
      if (is_boundary(infection, i, j)) out.at(i, j) = 1.0;
    }
  }
  return out;
}

}  // namespace rdseg
