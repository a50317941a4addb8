#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <set>

#include "hpm/masking.hpp"

using namespace hpm;

TEST_CASE("alpha_at endpoints and midpoint") {
    MaskSchedule s{0.0, 0.5, 100, 0.75};
    CHECK(alpha_at(s, 0) == 0.0);
    CHECK(alpha_at(s, 100) == 0.5);
    CHECK(alpha_at(s, 50) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK_THROWS_AS(alpha_at(s, -1), std::invalid_argument);
    CHECK_THROWS_AS(alpha_at(s, 101), std::invalid_argument);

    MaskSchedule rev{0.8, 0.2, 10, 0.75};
    CHECK(alpha_at(rev, 0) == 0.8);
    CHECK(alpha_at(rev, 10) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("generate_mask counting at the paper setting") {
    auto losses = torch::rand({216});
    auto mask = generate_mask(losses, 0.5, 0.75, 1);
    CHECK(mask.masked_count() == 162);  // round(0.75 * 216)
    CHECK(mask.guided_count == 81);     // floor(0.5 * 162)
    CHECK(mask.random_count == 81);

    std::set<int64_t> unique(mask.masked_indices.begin(), mask.masked_indices.end());
    CHECK(unique.size() == 162);  // guided and random sets disjoint
}

TEST_CASE("alpha=1 selects exactly the top-M losses") {
    // strictly decreasing losses: top-M is {0..M-1}
    auto losses = -torch::arange(16, torch::kFloat32);
    auto mask = generate_mask(losses, 1.0, 0.75, 9);
    CHECK(mask.guided_count == 12);
    CHECK(mask.random_count == 0);
    std::set<int64_t> got(mask.masked_indices.begin(), mask.masked_indices.end());
    std::set<int64_t> expect;
    for (int64_t i = 0; i < 12; ++i) expect.insert(i);
    CHECK(got == expect);
}

TEST_CASE("ties break toward the lower index") {
    auto losses = torch::zeros({8});
    auto mask = generate_mask(losses, 1.0, 0.5, 0);
    std::set<int64_t> got(mask.masked_indices.begin(), mask.masked_indices.end());
    CHECK(got == std::set<int64_t>{0, 1, 2, 3});
}

TEST_CASE("guided losses dominate unmasked losses when alpha=1") {
    for (uint64_t s = 0; s < 50; ++s) {
        torch::manual_seed(s);
        auto losses = torch::rand({32});
        auto mask = generate_mask(losses, 1.0, 0.6, s);
        double min_masked = 1e9, max_visible = -1e9;
        for (int64_t i : mask.masked_indices)
            min_masked = std::min(min_masked, losses[i].item<double>());
        for (int64_t i : mask.visible_indices())
            max_visible = std::max(max_visible, losses[i].item<double>());
        CHECK(min_masked >= max_visible);
    }
}

TEST_CASE("generate_mask is a pure function of its arguments") {
    auto losses = torch::rand({64});
    auto a = generate_mask(losses, 0.4, 0.75, 1234);
    auto b = generate_mask(losses, 0.4, 0.75, 1234);
    CHECK(a.masked_indices == b.masked_indices);
    auto c = generate_mask(losses, 0.4, 0.75, 1235);
    CHECK(a.masked_indices != c.masked_indices);
}

TEST_CASE("alpha=0 masks uniformly: Monte-Carlo frequency check") {
    // N=8, r=0.5: each index should be masked with frequency 0.5 +- 0.02
    const int trials = 10000;
    std::array<int, 8> counts{};
    auto losses = torch::zeros({8});
    for (int t = 0; t < trials; ++t) {
        auto mask = generate_mask(losses, 0.0, 0.5, static_cast<uint64_t>(t));
        CHECK(mask.guided_count == 0);
        for (int64_t i : mask.masked_indices) counts[static_cast<size_t>(i)]++;
    }
    for (int i = 0; i < 8; ++i) {
        double freq = static_cast<double>(counts[static_cast<size_t>(i)]) / trials;
        CHECK(freq == doctest::Approx(0.5).epsilon(0.04));  // 0.5 +- 0.02
    }
}

TEST_CASE("guided_count is non-decreasing along the curriculum") {
    MaskSchedule s{0.0, 0.9, 20, 0.75};
    auto losses = torch::rand({64});
    int64_t prev = -1;
    for (int64_t t = 0; t <= 20; ++t) {
        auto mask = generate_mask(losses, alpha_at(s, t), s.mask_ratio, 7);
        CHECK(mask.guided_count >= prev);
        prev = mask.guided_count;
    }
}

TEST_CASE("generate_mask validates its inputs") {
    auto losses = torch::rand({8});
    CHECK_THROWS_AS(generate_mask(losses, -0.1, 0.5, 0), std::invalid_argument);
    CHECK_THROWS_AS(generate_mask(losses, 0.5, 0.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(generate_mask(losses, 0.5, 1.0, 0), std::invalid_argument);
    CHECK_THROWS_AS(generate_mask(torch::rand({0}), 0.5, 0.5, 0), std::invalid_argument);
}
