#pragma once

#include <torch/torch.h>

#include <utility>

#include "hpm/masking.hpp"

namespace hpm {

// Masked reconstruction loss: per-patch MSE over voxels, total = mean over
// masked patches. predictions/targets are [M, P^3] or [B, M, P^3] and cover
// exactly the masked patches.
// Returns (scalar total, per-patch losses of shape [M] / [B, M]).
std::pair<torch::Tensor, torch::Tensor> rec_loss(const torch::Tensor& predictions,
                                                 const torch::Tensor& targets);

// Pairwise ranking loss over ordered pairs of masked patches:
//   -sum_{i != j} [ I+_{ij} log sigmoid(s_i - s_j) + I-_{ij} log(1 - sigmoid(s_i - s_j)) ]
// where I+ / I- compare the ground-truth per-patch losses (strict
// inequalities; ties activate neither). ground_truth is detached inside.
// Both vectors are length N; entries at unmasked indices are ignored.
torch::Tensor pred_loss(const torch::Tensor& student_pred,
                        const torch::Tensor& ground_truth, const Mask& mask);

// Analytic gradient of pred_loss w.r.t. student_pred vs central finite
// differences (step 1e-4); returns the max relative error.
double pred_loss_gradient_check(const torch::Tensor& student_pred,
                                const torch::Tensor& ground_truth, const Mask& mask,
                                double step = 1e-4);

// Mean of soft Dice (averaged over classes present in labels) and
// voxel-wise cross-entropy. logits [K,H,W,D] or [B,K,H,W,D]; labels int64
// of matching spatial shape.
torch::Tensor seg_loss(const torch::Tensor& logits, const torch::Tensor& labels);

inline torch::Tensor total_pretrain_loss(const torch::Tensor& l_rec,
                                         const torch::Tensor& l_pred, double w_pred) {
    return l_rec + w_pred * l_pred;
}

}  // namespace hpm
