#pragma once

#include <optional>
#include <utility>

#include "rdseg/eed.hpp"
#include "rdseg/grid.hpp"
#include "rdseg/network.hpp"

namespace rdseg {

struct RoiBox {
  int row0 = 0;
  int col0 = 0;
  int rows = 0;
  int cols = 0;

  friend bool operator==(const RoiBox&, const RoiBox&) = default;
};

struct LungPostprocess {
  Mask mask;
  bool empty_warning = false;  // no component survived the threshold
};

/// Binarize at the threshold, label 4-connected components, keep components
/// with area >= 10% of the largest, fill interior holes.
LungPostprocess postprocess_lung(const Grid& prob, double threshold = 0.5);

/// Tight bounding box of the mask grown by margin and clipped to the image.
/// Rejects empty masks.
RoiBox mask_bounding_box(const Mask& mask, int margin);

Grid crop_grid(const Grid& g, const RoiBox& box);
Mask crop_mask(const Mask& m, const RoiBox& box);

std::pair<Grid, RoiBox> crop_roi(const Grid& image, const Mask& lung_mask, int margin = 5);

/// Places a ROI-frame mask back into the full frame, zero elsewhere.
Mask uncrop(const Mask& roi_mask, const RoiBox& box, int full_h, int full_w);

struct EedOptions {
  EedParams params;
  // When set, params.lambda is replaced per image by 5% of the ROI range.
  bool lambda_auto = true;
};

EedParams resolve_eed(const EedOptions& opts, const Grid& roi);

struct CascadeOptions {
  EedOptions eed;
  double threshold = 0.5;
  int roi_margin = 5;
  bool keep_probabilities = false;
};

struct CascadeResult {
  Mask lung_mask;
  Mask infection_mask;
  RoiBox roi_box;
  bool lung_empty = false;  // lung stage found nothing; infection short-circuited
  std::optional<Grid> lung_probability;       // full frame
  std::optional<Grid> infection_probability;  // at the infection model's input size
};

/// Full cascade: lung segmentation gates an EED-enhanced ROI that the
/// infection network classifies; the infection mask is reprojected to the
/// original frame and intersected with the lung mask.
CascadeResult run_cascade(const Grid& image, const UnetModel<float>& lung_model,
                          const UnetModel<float>& infection_model,
                          const CascadeOptions& opts = {});

/// Copy of the image with mask boundaries burned in: lung boundary black,
/// infection boundary white.
Grid overlay_boundaries(const Grid& image, const Mask& lung, const Mask& infection);

}  // namespace rdseg
