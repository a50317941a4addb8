#include "hpm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace hpm {

double dsc(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask) {
    if (pred_mask.sizes() != gt_mask.sizes())
        throw std::invalid_argument("dsc: grid mismatch");
    auto a = pred_mask.to(torch::kBool);
    auto b = gt_mask.to(torch::kBool);
    int64_t na = a.sum().item<int64_t>();
    int64_t nb = b.sum().item<int64_t>();
    if (na == 0 && nb == 0) return 1.0;
    if (na == 0 || nb == 0) return 0.0;
    int64_t inter = (a & b).sum().item<int64_t>();
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

namespace {

struct Vox {
    int64_t x, y, z;
};

std::vector<Vox> boundary_voxels(const torch::Tensor& mask) {
    auto m = mask.to(torch::kBool).contiguous();
    const int64_t h = m.size(0), w = m.size(1), d = m.size(2);
    const bool* p = m.data_ptr<bool>();
    auto at = [&](int64_t x, int64_t y, int64_t z) {
        if (x < 0 || x >= h || y < 0 || y >= w || z < 0 || z >= d) return false;
        return p[(x * w + y) * d + z];
    };
    std::vector<Vox> out;
    for (int64_t x = 0; x < h; ++x)
        for (int64_t y = 0; y < w; ++y)
            for (int64_t z = 0; z < d; ++z) {
                if (!at(x, y, z)) continue;
                if (!at(x - 1, y, z) || !at(x + 1, y, z) || !at(x, y - 1, z) ||
                    !at(x, y + 1, z) || !at(x, y, z - 1) || !at(x, y, z + 1))
                    out.push_back({x, y, z});
            }
    return out;
}

void directed_distances(const std::vector<Vox>& from, const std::vector<Vox>& to,
                        const std::array<double, 3>& sp, std::vector<double>& out) {
    for (const auto& a : from) {
        double best = std::numeric_limits<double>::infinity();
        for (const auto& b : to) {
            double dx = static_cast<double>(a.x - b.x) * sp[0];
            double dy = static_cast<double>(a.y - b.y) * sp[1];
            double dz = static_cast<double>(a.z - b.z) * sp[2];
            best = std::min(best, dx * dx + dy * dy + dz * dz);
        }
        out.push_back(std::sqrt(best));
    }
}

}  // namespace

std::optional<double> hd95(const torch::Tensor& pred_mask, const torch::Tensor& gt_mask,
                           const std::array<double, 3>& spacing) {
    if (pred_mask.sizes() != gt_mask.sizes())
        throw std::invalid_argument("hd95: grid mismatch");
    auto sa = boundary_voxels(pred_mask);
    auto sb = boundary_voxels(gt_mask);
    if (sa.empty() || sb.empty()) return std::nullopt;

    std::vector<double> dists;
    dists.reserve(sa.size() + sb.size());
    directed_distances(sa, sb, spacing, dists);
    directed_distances(sb, sa, spacing, dists);
    std::sort(dists.begin(), dists.end());
    // nearest-rank percentile
    size_t rank = static_cast<size_t>(
        std::ceil(0.95 * static_cast<double>(dists.size())));
    rank = std::max<size_t>(rank, 1);
    return dists[rank - 1];
}

MetricsReport evaluate_case(const torch::Tensor& pred_labels,
                            const torch::Tensor& gt_labels, int num_classes,
                            const std::array<double, 3>& spacing,
                            const std::string& case_id) {
    MetricsReport rep;
    rep.case_id = case_id;
    double dsc_sum = 0.0, hd_sum = 0.0;
    int hd_n = 0;
    for (int c = 1; c < num_classes; ++c) {
        auto pm = pred_labels == c;
        auto gm = gt_labels == c;
        ClassMetrics cm;
        cm.dsc = dsc(pm, gm);
        cm.hd95 = hd95(pm, gm, spacing);
        dsc_sum += cm.dsc;
        if (cm.hd95) {
            hd_sum += *cm.hd95;
            ++hd_n;
        }
        rep.per_class[c] = cm;
    }
    if (!rep.per_class.empty())
        rep.mean_dsc = dsc_sum / static_cast<double>(rep.per_class.size());
    if (hd_n > 0) rep.mean_hd95 = hd_sum / hd_n;
    return rep;
}

MetricsReport aggregate_reports(const std::vector<MetricsReport>& reports) {
    MetricsReport agg;
    agg.case_id = "mean over " + std::to_string(reports.size()) + " cases";
    if (reports.empty()) return agg;
    std::map<int, std::pair<double, int>> dsc_acc;   // sum, count
    std::map<int, std::pair<double, int>> hd_acc;
    for (const auto& r : reports)
        for (const auto& [c, cm] : r.per_class) {
            dsc_acc[c].first += cm.dsc;
            dsc_acc[c].second += 1;
            if (cm.hd95) {
                hd_acc[c].first += *cm.hd95;
                hd_acc[c].second += 1;
            }
        }
    double dsum = 0.0, hsum = 0.0;
    int hn = 0;
    for (const auto& [c, acc] : dsc_acc) {
        ClassMetrics cm;
        cm.dsc = acc.first / acc.second;
        auto it = hd_acc.find(c);
        if (it != hd_acc.end() && it->second.second > 0)
            cm.hd95 = it->second.first / it->second.second;
        dsum += cm.dsc;
        if (cm.hd95) {
            hsum += *cm.hd95;
            ++hn;
        }
        agg.per_class[c] = cm;
    }
    agg.mean_dsc = dsum / static_cast<double>(agg.per_class.size());
    if (hn > 0) agg.mean_hd95 = hsum / hn;
    return agg;
}

nlohmann::json MetricsReport::to_json() const {
    nlohmann::json j;
    j["case_id"] = case_id;
    j["mean_dsc"] = mean_dsc;
    if (mean_hd95)
        j["mean_hd95"] = *mean_hd95;
    else
        j["mean_hd95"] = nullptr;
    for (const auto& [c, cm] : per_class) {
        nlohmann::json e;
        e["dsc"] = cm.dsc;
        if (cm.hd95)
            e["hd95"] = *cm.hd95;
        else
            e["hd95"] = nullptr;
        j["per_class"][std::to_string(c)] = e;
    }
    return j;
}

std::string MetricsReport::to_table(const std::vector<std::string>& class_names) const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    os << std::left << std::setw(28) << ("case " + case_id);
    os << std::setw(18) << "Avg DSC/HD95";
    for (const auto& [c, cm] : per_class) {
        std::string name = (c < static_cast<int>(class_names.size()))
                               ? class_names[static_cast<size_t>(c)]
                               : ("class" + std::to_string(c));
        os << std::setw(12) << name;
    }
    os << "\n";
    os << std::left << std::setw(28) << "";
    std::ostringstream avg;
    avg << std::fixed << std::setprecision(4) << mean_dsc << "/";
    if (mean_hd95)
        avg << std::setprecision(2) << *mean_hd95;
    else
        avg << "n/a";
    os << std::setw(18) << avg.str();
    for (const auto& [c, cm] : per_class) os << std::setw(12) << cm.dsc;
    os << "\n";
    return os.str();
}

}  // namespace hpm
