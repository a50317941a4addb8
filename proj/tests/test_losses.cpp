#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "hpm/losses.hpp"
#include "hpm/masking.hpp"

using namespace hpm;

namespace {

Mask mask_all(int64_t n) {
    Mask m;
    m.num_patches = n;
    m.guided_count = n;
    m.random_count = 0;
    for (int64_t i = 0; i < n; ++i) m.masked_indices.push_back(i);
    return m;
}

// Direct transcription of the ordered-pair sum for cross-checking.
double pred_loss_bruteforce(const torch::Tensor& s_in, const torch::Tensor& gt_in,
                            const Mask& mask) {
    auto sigmoid = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    double total = 0.0;
    for (int64_t a : mask.masked_indices) {
        for (int64_t b : mask.masked_indices) {
            if (a == b) continue;
            double si = s_in[a].item<double>(), sj = s_in[b].item<double>();
            double gi = gt_in[a].item<double>(), gj = gt_in[b].item<double>();
            if (gi > gj) total -= std::log(sigmoid(si - sj));
            if (gi < gj) total -= std::log(1.0 - sigmoid(si - sj));
        }
    }
    return total;
}

}  // namespace

TEST_CASE("rec_loss: identity gives zero, unit offset gives one") {
    auto x = torch::rand({12, 64});
    auto [total0, per0] = rec_loss(x, x);
    CHECK(total0.item<double>() == 0.0);
    CHECK(per0.abs().max().item<double>() == 0.0);

    auto [total1, per1] = rec_loss(x + 1.0, x);
    CHECK(total1.item<double>() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(per1.sizes() == torch::IntArrayRef({12}));
}

TEST_CASE("rec_loss total is the mean of the per-patch losses") {
    auto pred = torch::rand({3, 7, 16});
    auto tgt = torch::rand({3, 7, 16});
    auto [total, per] = rec_loss(pred, tgt);
    CHECK(per.sizes() == torch::IntArrayRef({3, 7}));
    CHECK(total.item<double>() == doctest::Approx(per.mean().item<double>()).epsilon(1e-7));
    CHECK_THROWS_AS(rec_loss(pred, torch::rand({3, 7, 8})), std::invalid_argument);
}

TEST_CASE("pred_loss: two-patch oracle") {
    // Equal scores, distinct ground truth: both ordered pairs contribute
    // -log sigmoid(0) = log 2, so the total is 2 log 2.
    auto s = torch::zeros({2});
    auto gt = torch::tensor({0.2f, 0.7f});
    auto m = mask_all(2);
    CHECK(pred_loss(s, gt, m).item<double>() ==
          doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("pred_loss matches a brute-force transcription") {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        torch::manual_seed(seed);
        auto s = torch::randn({12});
        auto gt = torch::rand({12});
        auto m = generate_mask(torch::rand({12}), 0.5, 0.5, seed);
        double fast = pred_loss(s, gt, m).item<double>();
        double slow = pred_loss_bruteforce(s, gt, m);
        CHECK(fast == doctest::Approx(slow).epsilon(1e-8));
    }
}

TEST_CASE("pred_loss: ties in the ground truth activate no pair") {
    auto s = torch::randn({6});
    auto gt = torch::full({6}, 0.5f);
    CHECK(pred_loss(s, gt, mask_all(6)).item<double>() == 0.0);
}

TEST_CASE("pred_loss rewards alignment with the ground-truth ordering") {
    auto gt = torch::tensor({0.1f, 0.4f, 0.9f, 0.2f});
    auto aligned = gt * 10.0;     // same ordering, wide margins
    auto inverted = -aligned;
    auto m = mask_all(4);
    CHECK(pred_loss(aligned, gt, m).item<double>() <
          pred_loss(inverted, gt, m).item<double>());
}

TEST_CASE("pred_loss is invariant to constant shifts of the scores") {
    auto s = torch::randn({8});
    auto gt = torch::rand({8});
    auto m = mask_all(8);
    double a = pred_loss(s, gt, m).item<double>();
    double b = pred_loss(s + 3.7, gt, m).item<double>();
    CHECK(a == doctest::Approx(b).epsilon(1e-6));
}

TEST_CASE("pred_loss ignores entries at unmasked indices") {
    auto s = torch::randn({10});
    auto gt = torch::rand({10});
    Mask m;
    m.num_patches = 10;
    m.masked_indices = {1, 4, 7};
    m.guided_count = 3;
    double base = pred_loss(s, gt, m).item<double>();
    auto s2 = s.clone();
    s2[0] = 99.0;
    s2[9] = -99.0;
    CHECK(pred_loss(s2, gt, m).item<double>() == doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("pred_loss gradient agrees with central finite differences") {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        torch::manual_seed(seed);
        auto s = torch::randn({10});
        auto gt = torch::rand({10});
        auto m = generate_mask(torch::rand({10}), 0.5, 0.6, seed);
        CHECK(pred_loss_gradient_check(s, gt, m) < 1e-4);
    }
}

TEST_CASE("pred_loss does not backprop into the ground truth") {
    auto s = torch::randn({6}).requires_grad_(true);
    auto gt = torch::rand({6}).requires_grad_(true);
    auto loss = pred_loss(s, gt, mask_all(6));
    loss.backward();
    CHECK(s.grad().defined());
    CHECK_FALSE(gt.grad().defined());
}

TEST_CASE("seg_loss: uniform logits on a two-class volume") {
    // CE term = log 2; each class's soft Dice = 1 - 2*(V_c/2)/(V/2 + V_c)
    // For a half/half split V_c = V/2, so dice term = 1 - (V/2)/(V) = 0.5.
    auto logits = torch::zeros({2, 4, 4, 4});
    auto labels = torch::zeros({4, 4, 4}, torch::kInt64);
    labels.slice(0, 0, 2).fill_(1);
    double got = seg_loss(logits, labels).item<double>();
    CHECK(got == doctest::Approx(0.5 * (std::log(2.0) + 0.5)).epsilon(1e-5));
}

TEST_CASE("seg_loss favors correct one-hot predictions") {
    auto labels = torch::randint(0, 3, {6, 6, 6}, torch::kInt64);
    auto onehot = torch::one_hot(labels, 3).permute({3, 0, 1, 2}).to(torch::kFloat32);
    auto good = 20.0 * onehot;
    auto bad = -20.0 * onehot;
    CHECK(seg_loss(good, labels).item<double>() < 1e-3);
    CHECK(seg_loss(good, labels).item<double>() < seg_loss(bad, labels).item<double>());
}

TEST_CASE("seg_loss is symmetric under a class relabeling") {
    torch::manual_seed(3);
    auto logits = torch::randn({3, 5, 5, 5});
    auto labels = torch::randint(0, 3, {5, 5, 5}, torch::kInt64);
    // swap classes 1 and 2 in both logits and labels
    auto perm = torch::tensor({0, 2, 1}, torch::kInt64);
    auto logits_p = logits.index_select(0, perm);
    auto labels_p = perm.index_select(0, labels.reshape(-1)).reshape(labels.sizes());
    CHECK(seg_loss(logits, labels).item<double>() ==
          doctest::Approx(seg_loss(logits_p, labels_p).item<double>()).epsilon(1e-5));
}

TEST_CASE("seg_loss rejects out-of-range labels") {
    auto logits = torch::randn({2, 3, 3, 3});
    auto labels = torch::full({3, 3, 3}, 2, torch::kInt64);
    CHECK_THROWS_AS(seg_loss(logits, labels), std::invalid_argument);
}

TEST_CASE("rec_loss per-patch output feeds pred_loss as ground truth") {
    // one code path: the per-patch vector has the right shape and ordering
    auto pred = torch::rand({8, 27});
    auto tgt = torch::rand({8, 27});
    auto [total, per] = rec_loss(pred, tgt);
    (void)total;
    auto m = mask_all(8);
    auto scores = torch::randn({8});
    CHECK(std::isfinite(pred_loss(scores, per, m).item<double>()));
    // the hardest patch by per-patch loss is the argmax
    auto hardest = per.argmax().item<int64_t>();
    double manual = (pred[hardest] - tgt[hardest]).pow(2).mean().item<double>();
    CHECK(manual == doctest::Approx(per.max().item<double>()).epsilon(1e-7));
}
