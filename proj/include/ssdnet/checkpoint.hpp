#pragma once

#include <cstdint>
#include <filesystem>

#include "ssdnet/model.hpp"

namespace ssdnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "SSDNETCK", u32 format version, u64 manifest length, JSON
/// manifest (config, normalization stats, parameter name -> shape/offset
/// index), then every parameter as little-endian float64 in manifest order.
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& path);

/// Rebuilds the bundle; a version mismatch, a missing or unexpected
/// parameter, or a shape mismatch raises CheckpointError naming the field.
ModelBundle load_bundle(const std::filesystem::path& path);

}  // namespace ssdnet
