#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>
#include <vector>

#include "hpm/metrics.hpp"

using namespace hpm;

namespace {

// Quadratic-time reference: every boundary voxel against every boundary voxel.
std::optional<double> hd95_reference(const torch::Tensor& a, const torch::Tensor& b,
                                     const std::array<double, 3>& sp) {
    auto boundary = [](const torch::Tensor& m) {
        std::vector<std::array<int64_t, 3>> out;
        const int64_t H = m.size(0), W = m.size(1), D = m.size(2);
        auto acc = m.accessor<bool, 3>();
        for (int64_t x = 0; x < H; ++x)
            for (int64_t y = 0; y < W; ++y)
                for (int64_t z = 0; z < D; ++z) {
                    if (!acc[x][y][z]) continue;
                    bool edge = x == 0 || x == H - 1 || y == 0 || y == W - 1 ||
                                z == 0 || z == D - 1;
                    if (!edge) {
                        edge = !acc[x - 1][y][z] || !acc[x + 1][y][z] ||
                               !acc[x][y - 1][z] || !acc[x][y + 1][z] ||
                               !acc[x][y][z - 1] || !acc[x][y][z + 1];
                    }
                    if (edge) out.push_back({x, y, z});
                }
        return out;
    };
    auto pa = boundary(a), pb = boundary(b);
    if (pa.empty() || pb.empty()) return std::nullopt;
    auto nearest = [&](const std::vector<std::array<int64_t, 3>>& from,
                       const std::vector<std::array<int64_t, 3>>& to,
                       std::vector<double>& dists) {
        for (const auto& p : from) {
            double best = std::numeric_limits<double>::max();
            for (const auto& q : to) {
                double dx = (p[0] - q[0]) * sp[0];
                double dy = (p[1] - q[1]) * sp[1];
                double dz = (p[2] - q[2]) * sp[2];
                best = std::min(best, std::sqrt(dx * dx + dy * dy + dz * dz));
            }
            dists.push_back(best);
        }
    };
    std::vector<double> pooled;
    nearest(pa, pb, pooled);
    nearest(pb, pa, pooled);
    std::sort(pooled.begin(), pooled.end());
    size_t rank = static_cast<size_t>(
        std::ceil(0.95 * static_cast<double>(pooled.size())));
    return pooled[rank - 1];
}

torch::Tensor cube(int64_t g, int64_t lo, int64_t hi) {
    auto m = torch::zeros({g, g, g}, torch::kBool);
    m.slice(0, lo, hi).slice(1, lo, hi).slice(2, lo, hi).fill_(true);
    return m;
}

}  // namespace

TEST_CASE("dsc trivial cases") {
    auto empty = torch::zeros({4, 4, 4}, torch::kBool);
    auto full = torch::ones({4, 4, 4}, torch::kBool);
    CHECK(dsc(empty, empty) == 1.0);
    CHECK(dsc(full, empty) == 0.0);
    CHECK(dsc(empty, full) == 0.0);
    CHECK(dsc(full, full) == 1.0);
}

TEST_CASE("dsc half-overlap oracle") {
    // |A| = 2, |B| = 2, |A ∩ B| = 1 -> 2*1/(2+2) = 0.5
    auto a = torch::zeros({3, 3, 3}, torch::kBool);
    auto b = torch::zeros({3, 3, 3}, torch::kBool);
    a[0][0][0] = true;
    a[0][0][1] = true;
    b[0][0][1] = true;
    b[0][0][2] = true;
    CHECK(dsc(a, b) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(dsc(b, a) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("hd95 on translated single voxels equals the offset") {
    auto a = torch::zeros({8, 8, 8}, torch::kBool);
    auto b = torch::zeros({8, 8, 8}, torch::kBool);
    a[2][2][2] = true;
    b[5][2][2] = true;  // 3 voxels apart along the first axis
    auto d = hd95(a, b, {1.0, 1.0, 1.0});
    REQUIRE(d.has_value());
    CHECK(*d == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("hd95 scales linearly with voxel spacing") {
    auto a = cube(10, 2, 5);
    auto b = cube(10, 4, 8);
    auto d1 = hd95(a, b, {1.0, 1.0, 1.0});
    auto d2 = hd95(a, b, {2.0, 2.0, 2.0});
    REQUIRE(d1.has_value());
    REQUIRE(d2.has_value());
    CHECK(*d2 == doctest::Approx(2.0 * *d1).epsilon(1e-9));
}

TEST_CASE("hd95 of identical masks is zero; empty masks are undefined") {
    auto a = cube(8, 2, 6);
    CHECK(*hd95(a, a, {1.0, 1.0, 1.0}) == 0.0);
    auto empty = torch::zeros({8, 8, 8}, torch::kBool);
    CHECK_FALSE(hd95(a, empty, {1.0, 1.0, 1.0}).has_value());
    CHECK_FALSE(hd95(empty, a, {1.0, 1.0, 1.0}).has_value());
}

TEST_CASE("hd95 matches the quadratic reference on random small masks") {
    for (uint64_t seed = 0; seed < 12; ++seed) {
        torch::manual_seed(seed);
        auto a = torch::rand({7, 7, 7}) > 0.6;
        auto b = torch::rand({7, 7, 7}) > 0.6;
        std::array<double, 3> sp{1.0, 0.5, 2.0};
        auto got = hd95(a, b, sp);
        auto want = hd95_reference(a, b, sp);
        REQUIRE(got.has_value() == want.has_value());
        if (got) CHECK(*got == doctest::Approx(*want).epsilon(1e-9));
        // symmetric by construction of the pooled multiset
        auto rev = hd95(b, a, sp);
        if (got) CHECK(*got == doctest::Approx(*rev).epsilon(1e-12));
    }
}

TEST_CASE("evaluate_case covers classes 1..K-1 and skips background") {
    auto gt = torch::zeros({8, 8, 8}, torch::kInt64);
    gt.slice(0, 0, 4).fill_(1);
    gt.slice(0, 6, 8).fill_(2);
    auto pred = gt.clone();
    pred.slice(0, 0, 2).fill_(0);  // degrade class 1
    auto rep = evaluate_case(pred, gt, 3, {1.0, 1.0, 1.0}, "case_x");
    CHECK(rep.per_class.size() == 2);
    CHECK(rep.per_class.count(0) == 0);
    CHECK(rep.per_class.at(2).dsc == doctest::Approx(1.0).epsilon(1e-12));
    // class 1: |pred|=2*64, |gt|=4*64, inter=2*64 -> 2*128/(128+256) = 2/3
    CHECK(rep.per_class.at(1).dsc == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(rep.mean_dsc ==
          doctest::Approx(0.5 * (1.0 + 2.0 / 3.0)).epsilon(1e-12));
    CHECK(rep.case_id == "case_x");
}

TEST_CASE("aggregate_reports averages per class and skips undefined hd95") {
    MetricsReport r1, r2;
    r1.case_id = "a";
    r1.per_class[1] = {0.8, 2.0};
    r1.per_class[2] = {0.6, std::nullopt};
    r1.mean_dsc = 0.7;
    r2.case_id = "b";
    r2.per_class[1] = {1.0, 4.0};
    r2.per_class[2] = {0.4, 6.0};
    r2.mean_dsc = 0.7;
    auto agg = aggregate_reports({r1, r2});
    CHECK(agg.per_class.at(1).dsc == doctest::Approx(0.9).epsilon(1e-12));
    CHECK(*agg.per_class.at(1).hd95 == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(agg.per_class.at(2).dsc == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(*agg.per_class.at(2).hd95 == doctest::Approx(6.0).epsilon(1e-12));
}

TEST_CASE("report serialization round-trips the numbers") {
    MetricsReport r;
    r.case_id = "case_007";
    r.per_class[1] = {0.85, 1.5};
    r.per_class[2] = {0.9, std::nullopt};
    r.mean_dsc = 0.875;
    auto j = r.to_json();
    CHECK(j["case_id"] == "case_007");
    CHECK(j["mean_dsc"].get<double>() == doctest::Approx(0.875));
    CHECK(j["per_class"]["1"]["dsc"].get<double>() == doctest::Approx(0.85));
    CHECK(j["per_class"]["1"]["hd95"].get<double>() == doctest::Approx(1.5));
    CHECK(j["per_class"]["2"]["hd95"].is_null());
    CHECK(r.to_table({"", "organ_a", "organ_b"}).find("organ_a") != std::string::npos);
}
