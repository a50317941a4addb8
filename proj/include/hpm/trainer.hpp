#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hpm/losses.hpp"
#include "hpm/masking.hpp"
#include "hpm/metrics.hpp"
#include "hpm/nets.hpp"
#include "hpm/volume.hpp"
#include "json.hpp"

namespace hpm {

struct ModelConfig {
    EncoderConfig encoder;
    DecoderConfig reconstructor{96, 2, 3, 4.0};
    DecoderConfig predictor{96, 2, 3, 4.0};
};

struct PretrainConfig {
    int64_t epochs = 30;
    int64_t batch_size = 4;
    double base_lr = 1.5e-4;
    double weight_decay = 0.05;
    int64_t warmup_epochs = -1;  // -1: 10% of epochs
    double mask_ratio = 0.75;
    double alpha0 = 0.0;
    double alphaT = 0.5;
    double ema_momentum = 0.999;
    double w_pred = 1.0;
    double grad_clip = 3.0;  // global norm; 0 disables
    double flip_prob = 0.5;
    int64_t crop = 0;  // 0: full volume
    double norm_eps = 1e-6;
    uint64_t seed = 0;

    int64_t effective_warmup() const {
        return warmup_epochs >= 0 ? warmup_epochs : epochs / 10;
    }
    MaskSchedule schedule() const { return {alpha0, alphaT, epochs, mask_ratio}; }
};

struct FinetuneConfig {
    int64_t epochs = 30;
    int64_t batch_size = 2;
    double base_lr = 8e-4;
    double weight_decay = 0.05;
    double layer_decay = 0.75;
    double droppath = 0.1;
    int64_t warmup_epochs = -1;
    double flip_prob = 0.5;
    uint64_t seed = 0;
    bool from_scratch = false;
    bool freeze_encoder = false;

    int64_t effective_warmup() const {
        return warmup_epochs >= 0 ? warmup_epochs : epochs / 10;
    }
};

// Linear warmup to base_lr over warmup_steps, then cosine decay to zero.
double lr_at(int64_t step, int64_t total_steps, int64_t warmup_steps, double base_lr);

// Per-layer rates for layer-wise lr decay: entry l of the first `depth`
// entries is base_lr * decay^(depth - l); the final entry (head) is base_lr.
std::vector<double> layer_lrs(double base_lr, double layer_decay, int64_t depth);

struct StepMetrics {
    double l_rec = 0.0;
    double l_pred = 0.0;
    double l_total = 0.0;
    double alpha = 0.0;
    int64_t guided_count = 0;
    int64_t masked_count = 0;
};

// One pretraining step over a batch of preprocessed volumes: teacher scores,
// per-sample easy-to-hard masks, student forward (reconstruction + difficulty
// ranking), optimizer step, EMA update. Caller sets learning rates.
StepMetrics pretrain_step(ModelPair& pair, torch::optim::AdamW& opt,
                          const std::vector<Volume>& batch, int64_t epoch, int64_t step,
                          const PretrainConfig& cfg);

struct PretrainResult {
    std::vector<nlohmann::json> log;  // one record per epoch
    std::filesystem::path last_checkpoint;
    std::filesystem::path best_checkpoint;
};

// run_epochs >= 0 caps how many epochs this invocation executes; the run can
// then be continued later via resume_from = <out_dir>/ckpt_last.
PretrainResult pretrain(const std::vector<Volume>& train, const ModelConfig& model,
                        const PretrainConfig& cfg, const std::filesystem::path& out_dir,
                        const std::filesystem::path& resume_from = {},
                        int64_t run_epochs = -1);

struct FinetuneResult {
    std::vector<nlohmann::json> log;
    std::filesystem::path best_checkpoint;
    double best_val_dsc = 0.0;
};

FinetuneResult finetune(const std::vector<Volume>& train, const std::vector<Volume>& val,
                        const ModelConfig& model, int num_classes,
                        const FinetuneConfig& cfg,
                        const std::filesystem::path& pretrain_checkpoint,
                        const std::filesystem::path& out_dir);

// Per-case + aggregate test metrics for a trained segmentation net.
std::pair<std::vector<MetricsReport>, MetricsReport> evaluate_net(
    SegmentationNet& net, const std::vector<Volume>& cases, int num_classes);

struct AblationArm {
    std::string label;
    double dsc = 0.0;
    std::optional<double> hd95;
};

struct AblationReport {
    std::vector<AblationArm> arms;  // baseline, pred-loss only, full
    uint64_t seed = 0;
    nlohmann::json to_json() const;
    std::string to_table() const;
};

AblationReport ablate(const std::vector<Volume>& train, const std::vector<Volume>& test,
                      const ModelConfig& model, int num_classes,
                      const PretrainConfig& pre_cfg, const FinetuneConfig& ft_cfg,
                      const std::filesystem::path& out_dir);

// Pin ATen to one thread so fixed seeds reproduce metrics logs bit-exactly.
void set_single_threaded();

}  // namespace hpm
