#pragma once

#include <filesystem>
#include <json.hpp>

#include "geoadapt/net.hpp"

namespace geoadapt::net {

// Checkpoint file: magic "GADPCKPT", u64 LE header length, JSON header
// (format version, net config, tensor shape table, caller metadata), then a
// little-endian float32 blob holding every tensor in header order,
// column-major within each tensor.
void save_checkpoint(const std::filesystem::path& path,
                     const ModelState<float>& model,
                     const nlohmann::json& meta = nlohmann::json::object());

// Throws CheckpointError on bad magic, malformed header, shape-table
// mismatch, or a blob whose size disagrees with the header.
ModelState<float> load_checkpoint(const std::filesystem::path& path,
                                  nlohmann::json* meta_out = nullptr);

}  // namespace geoadapt::net
