#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "rdseg/grid.hpp"
#include "rdseg/manifest.hpp"

namespace rdseg {

/// Synthetic chest-slice stand-in: a bright body ellipse, two dark lung
/// ellipses, and mid-intensity blob lesions fully inside the lungs, plus
/// additive noise (sigma 0.02). Masks satisfy infection ⊆ lung ⊆ body and
/// are exact (noise applies to the image only).
struct PhantomSpec {
  int size = 128;  // must be divisible by 16
  int lesion_count = 1;
  std::uint64_t seed = 0;
};

struct PhantomSample {
  Grid image;
  Mask lung;
  Mask infection;
};

PhantomSample generate_phantom(const PhantomSpec& spec);

/// Writes "<id>.imgf32", "<id>_lung.pgm", "<id>_infection.pgm" under dir and
/// returns a record with paths relative to dir.
SampleRecord write_phantom_files(const std::filesystem::path& dir, const std::string& id,
                                 const PhantomSample& sample, const std::string& split = "train");

}  // namespace rdseg
