#include "hpm/volume.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include "hpm/rng.hpp"
#include "json.hpp"

namespace hpm {

namespace {

double unit_uniform(std::mt19937_64& rng) {
    // 53-bit mantissa draw; avoids distribution-object portability issues.
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

int64_t bounded(std::mt19937_64& rng, int64_t n) {
    return static_cast<int64_t>(rng() % static_cast<uint64_t>(n));
}

double gaussian(std::mt19937_64& rng) {
    // Box-Muller, one sample per call.
    double u1 = std::max(unit_uniform(rng), 1e-300);
    double u2 = unit_uniform(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace

std::vector<std::pair<float, float>> default_intensity_ranges(int num_organs) {
    std::vector<std::pair<float, float>> ranges;
    ranges.emplace_back(0.0f, 0.15f);  // background
    const float span = 0.75f / static_cast<float>(num_organs);
    for (int k = 0; k < num_organs; ++k) {
        float lo = 0.25f + static_cast<float>(k) * span;
        ranges.emplace_back(lo, lo + 0.6f * span);
    }
    return ranges;
}

Volume generate_phantom(const PhantomSpec& spec) {
    if (spec.num_organs < 1)
        throw std::invalid_argument("PhantomSpec: num_organs must be >= 1");
    if (spec.grid_size < 1)
        throw std::invalid_argument("PhantomSpec: grid_size must be >= 1");
    auto ranges = spec.intensity_ranges.empty()
                      ? default_intensity_ranges(spec.num_organs)
                      : spec.intensity_ranges;
    if (static_cast<int>(ranges.size()) != spec.num_organs + 1)
        throw std::invalid_argument(
            "PhantomSpec: intensity_ranges must have num_organs + 1 entries");

    const int64_t g = spec.grid_size;
    const int64_t min_ax = std::max<int64_t>(2, g / 16);
    const int64_t max_ax = std::max<int64_t>(min_ax, g / 4);
    std::mt19937_64 rng(spec.seed);

    Volume v;
    v.data = torch::empty({g, g, g}, torch::kFloat32);
    v.labels = torch::zeros({g, g, g}, torch::kInt64);

    auto* data = v.data.data_ptr<float>();
    auto* lab = v.labels.data_ptr<int64_t>();

    // background
    {
        auto [lo, hi] = ranges[0];
        float base = lo + static_cast<float>(unit_uniform(rng)) * (hi - lo);
        for (int64_t i = 0; i < g * g * g; ++i) data[i] = base;
    }

    for (int k = 1; k <= spec.num_organs; ++k) {
        if (g < 2 * min_ax + 3)
            throw std::runtime_error("generate_phantom: grid too small to place organ class " +
                                     std::to_string(k));
        int64_t a = min_ax + bounded(rng, max_ax - min_ax + 1);
        int64_t b = min_ax + bounded(rng, max_ax - min_ax + 1);
        int64_t c = min_ax + bounded(rng, max_ax - min_ax + 1);
        int64_t cx = a + 1 + bounded(rng, g - 2 * a - 1);
        int64_t cy = b + 1 + bounded(rng, g - 2 * b - 1);
        int64_t cz = c + 1 + bounded(rng, g - 2 * c - 1);
        auto [lo, hi] = ranges[static_cast<size_t>(k)];
        float base = lo + static_cast<float>(unit_uniform(rng)) * (hi - lo);

        for (int64_t x = cx - a; x <= cx + a; ++x)
            for (int64_t y = cy - b; y <= cy + b; ++y)
                for (int64_t z = cz - c; z <= cz + c; ++z) {
                    double dx = double(x - cx) / double(a);
                    double dy = double(y - cy) / double(b);
                    double dz = double(z - cz) / double(c);
                    if (dx * dx + dy * dy + dz * dz <= 1.0) {
                        int64_t i = (x * g + y) * g + z;
                        data[i] = base;
                        lab[i] = k;
                    }
                }
    }

    if (spec.noise_sigma > 0.0f) {
        for (int64_t i = 0; i < g * g * g; ++i) {
            float n = spec.noise_sigma * static_cast<float>(gaussian(rng));
            data[i] = std::clamp(data[i] + n, 0.0f, 1.0f);
        }
    }
    return v;
}

Volume preprocess(const Volume& v, float clip_lo, float clip_hi) {
    if (!(clip_lo < clip_hi))
        throw std::invalid_argument("preprocess: clip_lo must be < clip_hi");
    Volume out;
    out.data = (v.data.clamp(clip_lo, clip_hi) - clip_lo) / (clip_hi - clip_lo);
    out.labels = v.labels;
    out.spacing = v.spacing;
    return out;
}

Volume augment_crop(const Volume& v, int64_t crop, double flip_prob, uint64_t seed) {
    auto d = v.dims();
    for (int ax = 0; ax < 3; ++ax)
        if (crop > d[static_cast<size_t>(ax)])
            throw std::invalid_argument("augment_crop: crop exceeds volume extent on axis " +
                                        std::to_string(ax));
    std::mt19937_64 rng(splitmix64(seed));
    std::array<int64_t, 3> off{};
    for (int ax = 0; ax < 3; ++ax) {
        int64_t slack = d[static_cast<size_t>(ax)] - crop;
        off[static_cast<size_t>(ax)] = slack > 0 ? bounded(rng, slack + 1) : 0;
    }
    std::vector<int64_t> flips;
    for (int64_t ax = 0; ax < 3; ++ax)
        if (unit_uniform(rng) < flip_prob) flips.push_back(ax);

    auto cut = [&](const torch::Tensor& t) {
        auto s = t.slice(0, off[0], off[0] + crop)
                     .slice(1, off[1], off[1] + crop)
                     .slice(2, off[2], off[2] + crop);
        if (!flips.empty()) s = s.flip(flips);
        return s.contiguous();
    };

    Volume out;
    out.data = cut(v.data);
    if (v.has_labels()) out.labels = cut(v.labels);
    out.spacing = v.spacing;
    return out;
}

void save_volume(const Volume& v, const std::filesystem::path& dir,
                 const std::vector<std::string>& class_names) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto d = v.dims();

    nlohmann::json meta;
    meta["dims"] = {d[0], d[1], d[2]};
    meta["spacing"] = {v.spacing[0], v.spacing[1], v.spacing[2]};
    meta["dtype"] = "f32";
    meta["has_labels"] = v.has_labels();
    meta["class_names"] = class_names;
    std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";

    auto data = v.data.contiguous();
    std::ofstream f(dir / "data.f32", std::ios::binary);
    f.write(reinterpret_cast<const char*>(data.data_ptr<float>()),
            static_cast<std::streamsize>(sizeof(float) * data.numel()));

    if (v.has_labels()) {
        auto lab = v.labels.to(torch::kUInt8).contiguous();
        std::ofstream g(dir / "labels.u8", std::ios::binary);
        g.write(reinterpret_cast<const char*>(lab.data_ptr<uint8_t>()),
                static_cast<std::streamsize>(lab.numel()));
    }
}

Volume load_volume(const std::filesystem::path& dir) {
    std::ifstream mf(dir / "meta.json");
    if (!mf) throw std::runtime_error("load_volume: missing meta.json in " + dir.string());
    nlohmann::json meta = nlohmann::json::parse(mf);
    std::array<int64_t, 3> d{meta["dims"][0], meta["dims"][1], meta["dims"][2]};
    int64_t n = d[0] * d[1] * d[2];

    Volume v;
    v.spacing = {meta["spacing"][0], meta["spacing"][1], meta["spacing"][2]};
    v.data = torch::empty({d[0], d[1], d[2]}, torch::kFloat32);
    {
        std::ifstream f(dir / "data.f32", std::ios::binary);
        if (!f) throw std::runtime_error("load_volume: missing data.f32 in " + dir.string());
        f.read(reinterpret_cast<char*>(v.data.data_ptr<float>()),
               static_cast<std::streamsize>(sizeof(float) * n));
        if (!f) throw std::runtime_error("load_volume: short read in data.f32");
    }
    if (meta.value("has_labels", false)) {
        auto u8 = torch::empty({d[0], d[1], d[2]}, torch::kUInt8);
        std::ifstream f(dir / "labels.u8", std::ios::binary);
        if (!f) throw std::runtime_error("load_volume: missing labels.u8 in " + dir.string());
        f.read(reinterpret_cast<char*>(u8.data_ptr<uint8_t>()),
               static_cast<std::streamsize>(n));
        if (!f) throw std::runtime_error("load_volume: short read in labels.u8");
        v.labels = u8.to(torch::kInt64);
    }
    return v;
}

}  // namespace hpm
