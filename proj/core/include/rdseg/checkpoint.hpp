#pragma once

#include <filesystem>

#include "rdseg/network.hpp"

namespace rdseg {

// Checkpoint layout:
//   bytes 0..7   magic "RDSN0001"
//   bytes 8..15  u64-le header length
//   header       JSON {format_version, model_config, train_config_digest,
//                tensors: [{name, shape, offset, byte_len}]}
//   payload      contiguous f32-le tensor data, row-major, offsets relative
//                to the payload start
// Running BN statistics and the BN update counter are stored as named
// tensors, so load(save(m)) restores the model bit-exactly.

void save_checkpoint(const std::filesystem::path& path, const UnetModel<float>& model);

/// Builds the model described by the header and fills it from the payload.
UnetModel<float> load_checkpoint(const std::filesystem::path& path);

/// Loads into an existing model; the header's model_config must match.
void load_checkpoint_into(const std::filesystem::path& path, UnetModel<float>& model);

}  // namespace rdseg
