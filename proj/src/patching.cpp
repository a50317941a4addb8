#include "hpm/patching.hpp"

#include <stdexcept>
#include <string>

namespace hpm {

PatchConfig make_patch_config(const std::array<int64_t, 3>& dims, int64_t patch_size) {
    if (patch_size < 1) throw std::invalid_argument("patch_size must be >= 1");
    static const char* axis_names[3] = {"H", "W", "D"};
    PatchConfig cfg;
    cfg.patch_size = patch_size;
    for (size_t ax = 0; ax < 3; ++ax) {
        if (dims[ax] % patch_size != 0)
            throw std::invalid_argument(std::string("patchify: axis ") + axis_names[ax] + " (" +
                                        std::to_string(dims[ax]) +
                                        ") not divisible by patch size " +
                                        std::to_string(patch_size));
        cfg.grid[ax] = dims[ax] / patch_size;
    }
    cfg.num_patches = cfg.grid[0] * cfg.grid[1] * cfg.grid[2];
    return cfg;
}

torch::Tensor patchify_tensor(const torch::Tensor& vol, int64_t patch_size) {
    auto cfg = make_patch_config({vol.size(0), vol.size(1), vol.size(2)}, patch_size);
    const auto [gh, gw, gd] = cfg.grid;
    const int64_t p = patch_size;
    return vol.view({gh, p, gw, p, gd, p})
        .permute({0, 2, 4, 1, 3, 5})
        .reshape({cfg.num_patches, p * p * p});
}

PatchSequence patchify(const Volume& v, int64_t patch_size) {
    PatchSequence ps;
    ps.config = make_patch_config(v.dims(), patch_size);
    ps.patches = patchify_tensor(v.data, patch_size).contiguous();
    ps.spacing = v.spacing;
    return ps;
}

torch::Tensor unpatchify_tensor(const torch::Tensor& patches, const PatchConfig& cfg) {
    const auto [gh, gw, gd] = cfg.grid;
    const int64_t p = cfg.patch_size;
    return patches.view({gh, gw, gd, p, p, p})
        .permute({0, 3, 1, 4, 2, 5})
        .reshape({gh * p, gw * p, gd * p});
}

Volume unpatchify(const PatchSequence& ps) {
    auto patches = ps.patches;
    if (ps.normalized()) patches = patches * ps.std + ps.mean;
    Volume v;
    v.data = unpatchify_tensor(patches, ps.config).contiguous();
    v.spacing = ps.spacing;
    return v;
}

PatchSequence normalize_targets(const PatchSequence& ps, double eps) {
    if (!(eps > 0.0)) throw std::invalid_argument("normalize_targets: eps must be > 0");
    PatchSequence out;
    out.config = ps.config;
    out.spacing = ps.spacing;
    out.mean = ps.patches.mean(/*dim=*/1, /*keepdim=*/true);
    auto var = ps.patches.var(/*dim=*/1, /*unbiased=*/false, /*keepdim=*/true);
    out.std = (var + eps).sqrt();
    out.patches = (ps.patches - out.mean) / out.std;
    return out;
}

}  // namespace hpm
