#pragma once

#include <map>
#include <string>
#include <vector>

#include "taco/model_config.hpp"
#include "taco/tensor.hpp"

namespace taco {

// Versioned binary container: magic, format version, a JSON header carrying
// the ModelConfig, free-form string metadata and a tensor directory, then the
// raw little-endian float64 payloads. Round-trips are bit-exact. The same
// container stores model checkpoints, optimizer state, compressed contexts
// and KV caches.
struct CheckpointData {
    ModelConfig config;
    std::string arch = "taco";  // "taco" | "pot"
    std::map<std::string, std::string> meta;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);

// Throws CheckpointError on bad magic/version/header and IoError on
// filesystem failures.
CheckpointData load_checkpoint(const std::string& path);

}  // namespace taco
