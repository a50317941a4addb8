#include "hpm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hpm {

namespace F = torch::nn::functional;

std::pair<torch::Tensor, torch::Tensor> rec_loss(const torch::Tensor& predictions,
                                                 const torch::Tensor& targets) {
    if (predictions.sizes() != targets.sizes())
        throw std::invalid_argument("rec_loss: prediction/target shape mismatch");
    auto per_patch = (predictions - targets).pow(2).mean(-1);
    return {per_patch.mean(), per_patch};
}

torch::Tensor pred_loss(const torch::Tensor& student_pred,
                        const torch::Tensor& ground_truth, const Mask& mask) {
    if (student_pred.dim() != 1 || ground_truth.dim() != 1 ||
        student_pred.size(0) != ground_truth.size(0) ||
        student_pred.size(0) != mask.num_patches)
        throw std::invalid_argument("pred_loss: length mismatch");

    auto idx = torch::tensor(mask.masked_indices, torch::kInt64);
    auto s = student_pred.index_select(0, idx);
    auto gt = ground_truth.detach().index_select(0, idx);

    auto diff = s.unsqueeze(1) - s.unsqueeze(0);          // [M, M]
    auto gt_diff = gt.unsqueeze(1) - gt.unsqueeze(0);     // constants
    auto pos = (gt_diff > 0).to(s.dtype());               // I+_{ij}
    auto neg = (gt_diff < 0).to(s.dtype());               // I-_{ij}
    // log(1 - sigmoid(x)) == logsigmoid(-x); both via the stable softplus path
    auto terms = pos * F::logsigmoid(diff) + neg * F::logsigmoid(-diff);
    return -terms.sum();
}

double pred_loss_gradient_check(const torch::Tensor& student_pred,
                                const torch::Tensor& ground_truth, const Mask& mask,
                                double step) {
    auto s = student_pred.detach().to(torch::kFloat64).requires_grad_(true);
    auto gt = ground_truth.detach().to(torch::kFloat64);
    auto loss = pred_loss(s, gt, mask);
    auto analytic = torch::autograd::grad({loss}, {s}, /*grad_outputs=*/{},
                                          /*retain_graph=*/false,
                                          /*create_graph=*/false,
                                          /*allow_unused=*/true)[0];
    if (!analytic.defined()) analytic = torch::zeros_like(s);

    torch::NoGradGuard ng;
    auto base = s.detach().clone();
    double max_rel = 0.0;
    for (int64_t i = 0; i < base.size(0); ++i) {
        auto hi = base.clone();
        auto lo = base.clone();
        hi[i] += step;
        lo[i] -= step;
        double fd = (pred_loss(hi, gt, mask).item<double>() -
                     pred_loss(lo, gt, mask).item<double>()) /
                    (2.0 * step);
        double an = analytic[i].item<double>();
        double denom = std::max(std::abs(an), std::abs(fd));
        double err = denom > 1e-8 ? std::abs(an - fd) / denom : std::abs(an - fd);
        max_rel = std::max(max_rel, err);
    }
    return max_rel;
}

torch::Tensor seg_loss(const torch::Tensor& logits_in, const torch::Tensor& labels_in) {
    auto logits = logits_in.dim() == 4 ? logits_in.unsqueeze(0) : logits_in;
    auto labels = labels_in.dim() == 3 ? labels_in.unsqueeze(0) : labels_in;
    const int64_t k = logits.size(1);
    if (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() >= k)
        throw std::invalid_argument("seg_loss: label out of range [0, K)");

    auto ce = F::cross_entropy(logits, labels);

    auto probs = torch::softmax(logits, 1);
    auto onehot = torch::one_hot(labels, k).permute({0, 4, 1, 2, 3}).to(probs.dtype());
    const double eps = 1e-6;
    auto inter = (probs * onehot).sum({0, 2, 3, 4});
    auto denom = probs.sum({0, 2, 3, 4}) + onehot.sum({0, 2, 3, 4});
    auto dice_c = 1.0 - (2.0 * inter + eps) / (denom + eps);
    // average over classes actually present
    auto present = (onehot.sum({0, 2, 3, 4}) > 0);
    auto dice = dice_c.masked_select(present).mean();

    return 0.5 * (ce + dice);
}

}  // namespace hpm
