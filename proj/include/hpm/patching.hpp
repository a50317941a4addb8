#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>

#include "hpm/volume.hpp"

namespace hpm {

struct PatchConfig {
    int64_t patch_size = 16;
    std::array<int64_t, 3> grid{0, 0, 0};  // (H/P, W/P, D/P)
    int64_t num_patches = 0;

    int64_t patch_voxels() const { return patch_size * patch_size * patch_size; }
};

PatchConfig make_patch_config(const std::array<int64_t, 3>& dims, int64_t patch_size);

// A volume flattened into N fixed-size patch vectors plus grid geometry.
// Patch order is row-major over the (H/P, W/P, D/P) grid; voxels within a
// patch are C-order. This ordering is load-bearing: pretraining and
// fine-tuning must agree on it.
struct PatchSequence {
    torch::Tensor patches;  // [N, P^3]
    PatchConfig config;
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    torch::Tensor mean;  // [N, 1] when normalized, undefined otherwise
    torch::Tensor std;   // [N, 1] sqrt(var + eps)

    bool normalized() const { return mean.defined(); }
};

PatchSequence patchify(const Volume& v, int64_t patch_size);

// Same reshape on a raw [H,W,D] tensor (keeps autograd graph intact).
torch::Tensor patchify_tensor(const torch::Tensor& vol, int64_t patch_size);

// Exact inverse of patchify (uses stored stats to undo normalization when present).
Volume unpatchify(const PatchSequence& ps);
torch::Tensor unpatchify_tensor(const torch::Tensor& patches, const PatchConfig& cfg);

// Per-patch (p - mean) / sqrt(var + eps), population variance; stats stored.
PatchSequence normalize_targets(const PatchSequence& ps, double eps = 1e-6);

}  // namespace hpm
