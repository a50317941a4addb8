#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <vector>

namespace hpm {

// Easy-to-hard curriculum: the fraction of the masked budget chosen by
// predicted difficulty grows linearly from alpha0 at epoch 0 to alphaT
// at epoch total_epochs.
struct MaskSchedule {
    double alpha0 = 0.0;
    double alphaT = 0.5;
    int64_t total_epochs = 0;
    double mask_ratio = 0.75;
};

double alpha_at(const MaskSchedule& s, int64_t epoch);

struct Mask {
    std::vector<int64_t> masked_indices;  // guided first, then random; each sorted
    int64_t num_patches = 0;
    int64_t guided_count = 0;
    int64_t random_count = 0;

    int64_t masked_count() const { return guided_count + random_count; }
    std::vector<int64_t> visible_indices() const;
    torch::Tensor bool_mask() const;  // [N], true at masked positions
};

// M = round(r*N) masked patches: the G = floor(alpha*M) with highest
// predicted loss (ties to the lower index), plus M-G drawn uniformly
// without replacement from the rest. Pure function of its arguments.
Mask generate_mask(const torch::Tensor& predicted_losses, double alpha, double r,
                   uint64_t seed);

}  // namespace hpm
