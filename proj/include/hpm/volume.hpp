#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace hpm {

// Dense 3D scalar grid with an optional per-voxel integer label map.
struct Volume {
    torch::Tensor data;               // float32 [H, W, D]
    torch::Tensor labels;             // int64 [H, W, D]; undefined when absent
    std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm per voxel

    bool has_labels() const { return labels.defined(); }
    std::array<int64_t, 3> dims() const {
        return {data.size(0), data.size(1), data.size(2)};
    }
};

struct PhantomSpec {
    int64_t grid_size = 64;
    int num_organs = 4;
    // per-class intensity interval, index 0 is background; when empty,
    // default_intensity_ranges(num_organs) is used.
    std::vector<std::pair<float, float>> intensity_ranges;
    float noise_sigma = 0.02f;
    uint64_t seed = 0;
};

// Disjoint per-class intervals: background low, organs evenly spread upward.
std::vector<std::pair<float, float>> default_intensity_ranges(int num_organs);

// Deterministic ellipsoid phantom; later-drawn organs overwrite earlier
// ones on overlap. Throws std::invalid_argument on bad spec and
// std::runtime_error naming the first unplaceable class.
Volume generate_phantom(const PhantomSpec& spec);

// Clip intensities to [clip_lo, clip_hi] then map affinely to [0, 1].
Volume preprocess(const Volume& v, float clip_lo, float clip_hi);

// Random crop of size crop^3 plus independent per-axis flips; labels
// transformed identically; deterministic given seed.
Volume augment_crop(const Volume& v, int64_t crop, double flip_prob, uint64_t seed);

// --- volume container (meta.json + data.f32 + labels.u8, C-order) ---

void save_volume(const Volume& v, const std::filesystem::path& dir,
                 const std::vector<std::string>& class_names = {});
Volume load_volume(const std::filesystem::path& dir);

}  // namespace hpm
