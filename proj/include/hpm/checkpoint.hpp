#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"

namespace hpm {

// Checkpoint directory layout:
//   manifest.json  — metadata plus a tensor table (name -> dtype/shape/offset)
//   tensors.bin    — raw little-endian tensor payloads, concatenated
// Names are the libtorch module paths (e.g. "student.encoder.blocks.0.attn.
// qkv.weight"), so encoder weights can be pulled into other nets by prefix.
void save_checkpoint(const std::filesystem::path& dir,
                     const std::map<std::string, torch::Tensor>& tensors,
                     const nlohmann::json& meta);

struct LoadedCheckpoint {
    std::map<std::string, torch::Tensor> tensors;
    nlohmann::json meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

// Copy entries whose name starts with `src_prefix` into matching parameters
// of `module` named `dst_prefix + rest`. Returns the number of tensors copied.
int load_by_prefix(const std::map<std::string, torch::Tensor>& tensors,
                   const std::string& src_prefix, torch::nn::Module& module,
                   const std::string& dst_prefix);

}  // namespace hpm
