#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "tristyle/nn.hpp"

namespace tristyle {

// Single-file archive: 8-byte magic, u64 header length, JSON header
// ({"manifest": ..., "tensors": [{name, shape, offset}]}), raw little-endian
// float32 payload. The compressed variant zlib-deflates everything after the
// magic.
struct Checkpoint {
  nlohmann::json manifest = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt, bool compressed = false);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint to_checkpoint(const nn::ParamList& params, nlohmann::json manifest);
// Copies named tensors into params; every param must be present with a matching shape.
void load_params(const nn::ParamList& params, const Checkpoint& ckpt, const std::string& prefix = "");

}  // namespace tristyle
