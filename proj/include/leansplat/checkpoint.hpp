#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "leansplat/array.hpp"

namespace leansplat {

// Single binary file, little-endian, length-prefixed named tensors.
// Layout: magic "LGS1", u32 version, u64 iteration, config text blob,
// RNG state blob, tensor count, then per tensor: name, dtype, dims, raw data.
struct CheckpointData {
    uint64_t iteration = 0;
    std::string config_text;
    std::string rng_state;
    std::map<std::string, Array> tensors;
};

void save_checkpoint_file(const std::string& path, const CheckpointData& data);

// Parses the whole file before returning; a corrupt file throws DataError
// and nothing is partially applied.
CheckpointData load_checkpoint_file(const std::string& path);

}  // namespace leansplat
