#pragma once

#include <filesystem>

#include "sponge/model.hpp"

// On-disk model format: a JSON header plus a companion blob of little-endian
// IEEE-754 float32 values.
//
//   model.json   {"format": "sponge-model", "version": 1,
//                 "input_shape": [...], "blob": "model.bin",
//                 "blob_bytes": N, "blob_crc32": C,
//                 "layers": [{"name", "kind", "attrs", "params"}...],
//                 "tensors": {name: {"shape", "offset", "length"}}}
//   model.bin    raw tensor bytes; offset and length are in bytes
//
// The blob sits next to the header with the header's stem and a .bin suffix.
namespace sponge {

void save_model(const ModelGraph& model, const std::filesystem::path& header_path);

// Throws LoadError on malformed headers, truncated or corrupted blobs and
// inconsistent shapes; messages name the offending layer or tensor.
ModelGraph load_model(const std::filesystem::path& header_path);

}  // namespace sponge
