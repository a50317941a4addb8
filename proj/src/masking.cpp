#include "hpm/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "hpm/rng.hpp"

namespace hpm {

double alpha_at(const MaskSchedule& s, int64_t epoch) {
    if (epoch < 0 || epoch > s.total_epochs)
        throw std::invalid_argument("alpha_at: epoch outside [0, T]");
    if (s.total_epochs == 0) return s.alpha0;
    double t = static_cast<double>(epoch) / static_cast<double>(s.total_epochs);
    return s.alpha0 + t * (s.alphaT - s.alpha0);
}

std::vector<int64_t> Mask::visible_indices() const {
    std::vector<bool> is_masked(static_cast<size_t>(num_patches), false);
    for (int64_t i : masked_indices) is_masked[static_cast<size_t>(i)] = true;
    std::vector<int64_t> vis;
    vis.reserve(static_cast<size_t>(num_patches - masked_count()));
    for (int64_t i = 0; i < num_patches; ++i)
        if (!is_masked[static_cast<size_t>(i)]) vis.push_back(i);
    return vis;
}

torch::Tensor Mask::bool_mask() const {
    auto m = torch::zeros({num_patches}, torch::kBool);
    auto* p = m.data_ptr<bool>();
    for (int64_t i : masked_indices) p[i] = true;
    return m;
}

Mask generate_mask(const torch::Tensor& predicted_losses, double alpha, double r,
                   uint64_t seed) {
    if (predicted_losses.dim() != 1 || predicted_losses.size(0) < 1)
        throw std::invalid_argument("generate_mask: losses must be a non-empty 1D vector");
    if (alpha < 0.0 || alpha > 1.0)
        throw std::invalid_argument("generate_mask: alpha outside [0, 1]");
    if (!(r > 0.0 && r < 1.0))
        throw std::invalid_argument("generate_mask: mask ratio outside (0, 1)");

    const int64_t n = predicted_losses.size(0);
    const int64_t m = std::llround(r * static_cast<double>(n));
    const int64_t g = static_cast<int64_t>(std::floor(alpha * static_cast<double>(m)));

    auto losses = predicted_losses.detach().to(torch::kFloat64).contiguous();
    const double* lv = losses.data_ptr<double>();

    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
        if (lv[a] != lv[b]) return lv[a] > lv[b];
        return a < b;  // ties broken by lower index first
    });

    Mask mask;
    mask.num_patches = n;
    mask.guided_count = g;
    mask.random_count = m - g;
    mask.masked_indices.assign(order.begin(), order.begin() + g);
    std::sort(mask.masked_indices.begin(), mask.masked_indices.end());

    // Fisher-Yates over the N-G remaining indices, take the first M-G.
    std::vector<int64_t> rest(order.begin() + g, order.end());
    std::sort(rest.begin(), rest.end());
    std::mt19937_64 rng(splitmix64(seed));
    for (int64_t i = 0; i < m - g; ++i) {
        int64_t j = i + static_cast<int64_t>(rng() % static_cast<uint64_t>(rest.size() - i));
        std::swap(rest[static_cast<size_t>(i)], rest[static_cast<size_t>(j)]);
    }
    std::vector<int64_t> random_part(rest.begin(), rest.begin() + (m - g));
    std::sort(random_part.begin(), random_part.end());
    mask.masked_indices.insert(mask.masked_indices.end(), random_part.begin(),
                               random_part.end());
    return mask;
}

}  // namespace hpm
