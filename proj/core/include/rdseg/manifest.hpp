#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace rdseg {

/// One CT slice with its raster and mask files. Paths are stored relative to
/// the manifest file and resolved on load.
struct SampleRecord {
  std::string id;
  std::string image_path;
  std::optional<std::string> lung_mask_path;
  std::optional<std::string> infection_mask_path;
  std::string split = "train";
};

/// Order-preserving load; rejects duplicate ids, unknown splits, and
/// referenced files that do not exist.
std::vector<SampleRecord> load_manifest(const std::filesystem::path& file);

/// Writes {"samples": [...]} with paths exactly as given.
void write_manifest(const std::filesystem::path& file, const std::vector<SampleRecord>& samples);

}  // namespace rdseg
