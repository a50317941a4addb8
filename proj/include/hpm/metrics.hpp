#pragma once

#include <torch/torch.h>

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

namespace hpm {

// Dice similarity coefficient on boolean voxel masks; 1 when both sets are
// empty, 0 when exactly one is.
double dsc(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask);

// 95th-percentile symmetric surface distance in mm (nearest-rank on the
// pooled both-direction multiset). Boundary = mask voxel with a 6-connected
// neighbor outside the mask. nullopt when either mask is empty.
std::optional<double> hd95(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask,
                           const std::array<double, 3>& spacing);

struct ClassMetrics {
    double dsc = 0.0;
    std::optional<double> hd95;  // undefined for empty masks, excluded from averages
};

struct MetricsReport {
    std::map<int, ClassMetrics> per_class;  // organ classes (background excluded)
    double mean_dsc = 0.0;
    std::optional<double> mean_hd95;
    std::string case_id;

    nlohmann::json to_json() const;
    std::string to_table(const std::vector<std::string>& class_names = {}) const;
};

// Per-class metrics for integer label volumes; classes 1..K-1 evaluated.
MetricsReport evaluate_case(const torch::Tensor& pred_labels,
                            const torch::Tensor& gt_labels, int num_classes,
                            const std::array<double, 3>& spacing,
                            const std::string& case_id);

// Mean over per-case reports (each entry averaged over cases where defined).
MetricsReport aggregate_reports(const std::vector<MetricsReport>& reports);

}  // namespace hpm
