#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "seuforge/model.hpp"

namespace seuforge {

inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Container layout (all little-endian):
///   8 bytes  magic "SEUFORGE"
///   u32      format version
///   u32      flags (reserved, 0)
///   u64      manifest length in bytes
///   u64      FNV-1a of the manifest
///   manifest UTF-8 JSON (layers, p-index table with blob offsets, encodings,
///            quantization tables, epsilon, metadata, blob size and checksum)
///   padding  zero bytes up to an 8-byte boundary
///   blob     raw parameter buffers, each starting 8-byte aligned
std::vector<std::byte> serialize_model(const ModelGraph& graph);
ModelGraph deserialize_model(std::span<const std::byte> data);

void save_model(const ModelGraph& graph, const std::filesystem::path& path);
ModelGraph load_model(const std::filesystem::path& path);

/// Manifest JSON alone (for `model info`).
std::string model_manifest_json(const ModelGraph& graph, int indent = 2);

}  // namespace seuforge
