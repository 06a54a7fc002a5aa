#pragma once

#include <filesystem>

#include "rdseg/grid.hpp"

namespace rdseg {

// Raster formats, self-describing by magic bytes:
//   - binary PGM ("P5"), 8-bit or 16-bit big-endian samples, mapped to [0,1]
//     by maxval division;
//   - raw float ("IMGF32\n"), u32-le width, u32-le height, row-major f32-le.
// Masks are 8-bit PGM restricted to {0, 255}. Loaders reject any other
// format's files and report the byte offset of the first violation.

Grid read_raster(const std::filesystem::path& path);

void write_raster_pgm8(const std::filesystem::path& path, const Grid& g);
void write_raster_pgm16(const std::filesystem::path& path, const Grid& g);
void write_raster_imgf32(const std::filesystem::path& path, const Grid& g);

/// Dispatch on extension: ".pgm" writes 8-bit PGM, ".imgf32" writes raw float.
void write_raster(const std::filesystem::path& path, const Grid& g);

Mask read_mask(const std::filesystem::path& path);
void write_mask(const std::filesystem::path& path, const Mask& m);

}  // namespace rdseg
