#include "hpm/trainer.hpp"

#include <torch/torch.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "hpm/checkpoint.hpp"
#include "hpm/patching.hpp"
#include "hpm/rng.hpp"

namespace hpm {

double lr_at(int64_t step, int64_t total_steps, int64_t warmup_steps, double base_lr) {
    if (step > total_steps) throw std::invalid_argument("lr_at: step beyond total_steps");
    if (warmup_steps > 0 && step < warmup_steps)
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (total_steps == warmup_steps) return 0.0;
    double progress = static_cast<double>(step - warmup_steps) /
                      static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

std::vector<double> layer_lrs(double base_lr, double layer_decay, int64_t depth) {
    if (!(layer_decay > 0.0 && layer_decay <= 1.0))
        throw std::invalid_argument("layer_lrs: layer_decay outside (0, 1]");
    std::vector<double> rates(static_cast<size_t>(depth) + 1);
    for (int64_t l = 0; l < depth; ++l)
        rates[static_cast<size_t>(l)] =
            base_lr * std::pow(layer_decay, static_cast<double>(depth - l));
    rates[static_cast<size_t>(depth)] = base_lr;  // head
    return rates;
}

void set_single_threaded() {
    at::set_num_threads(1);
    try {
        at::set_num_interop_threads(1);
    } catch (const std::exception&) {
        // interop pool already started; intra-op pinning is what matters here
    }
}

namespace {

constexpr uint64_t kAugStream = 0xA46;
constexpr uint64_t kMaskStream = 0x3A5C;
constexpr uint64_t kOrderStream = 0x0DE2;
constexpr uint64_t kTorchStream = 0x70C4;

Volume augment_sample(const Volume& v, int64_t crop, double flip_prob, uint64_t seed) {
    int64_t c = crop > 0 ? crop : std::min({v.dims()[0], v.dims()[1], v.dims()[2]});
    return augment_crop(v, c, flip_prob, seed);
}

torch::Tensor index_tensor(const std::vector<int64_t>& v) {
    return torch::tensor(v, torch::kInt64);
}

}  // namespace

StepMetrics pretrain_step(ModelPair& pair, torch::optim::AdamW& opt,
                          const std::vector<Volume>& batch, int64_t epoch, int64_t step,
                          const PretrainConfig& cfg) {
    const auto& enc_cfg = pair.student->encoder->cfg;
    const int64_t n = enc_cfg.num_patches();
    const int64_t pv = enc_cfg.patch_voxels();
    const int64_t b = static_cast<int64_t>(batch.size());

    std::vector<torch::Tensor> raw, tgt;
    raw.reserve(batch.size());
    tgt.reserve(batch.size());
    for (int64_t i = 0; i < b; ++i) {
        uint64_t aug_seed = mix_seed(cfg.seed, kAugStream ^ static_cast<uint64_t>(epoch),
                                     static_cast<uint64_t>(step) * 8192 +
                                         static_cast<uint64_t>(i));
        auto v = augment_sample(batch[static_cast<size_t>(i)], cfg.crop, cfg.flip_prob,
                                aug_seed);
        auto ps = patchify(v, enc_cfg.patch_size);
        if (ps.config.num_patches != n)
            throw std::invalid_argument("pretrain_step: volume grid does not match encoder");
        raw.push_back(ps.patches);
        tgt.push_back(normalize_targets(ps, cfg.norm_eps).patches);
    }
    auto x = torch::stack(raw);        // [B, N, P^3]
    auto targets = torch::stack(tgt);  // [B, N, P^3]
    auto all_pos = torch::arange(n, torch::kInt64);

    const double alpha = alpha_at(cfg.schedule(), epoch);

    // teacher scores the full sequence; skipped when the curriculum is off
    torch::Tensor teacher_losses;
    if (alpha > 0.0) {
        torch::NoGradGuard ng;
        auto tokens = pair.teacher->encoder->forward(x, all_pos);
        teacher_losses = pair.teacher->predict_difficulty(tokens, all_pos);
    } else {
        teacher_losses = torch::zeros({b, n});
    }

    std::vector<Mask> masks;
    std::vector<int64_t> vis_flat, msk_flat;
    masks.reserve(batch.size());
    for (int64_t i = 0; i < b; ++i) {
        uint64_t mask_seed = mix_seed(cfg.seed, kMaskStream ^ static_cast<uint64_t>(epoch),
                                      static_cast<uint64_t>(step) * 8192 +
                                          static_cast<uint64_t>(i));
        masks.push_back(generate_mask(teacher_losses[i], alpha, cfg.mask_ratio, mask_seed));
        auto vis = masks.back().visible_indices();
        vis_flat.insert(vis_flat.end(), vis.begin(), vis.end());
        msk_flat.insert(msk_flat.end(), masks.back().masked_indices.begin(),
                        masks.back().masked_indices.end());
    }
    const int64_t m = masks[0].masked_count();
    auto vis_idx = index_tensor(vis_flat).view({b, n - m});
    auto msk_idx = index_tensor(msk_flat).view({b, m});

    pair.student->train();
    auto vis_patches = torch::gather(x, 1, vis_idx.unsqueeze(-1).expand({b, n - m, pv}));
    auto tokens = pair.student->encoder->forward(vis_patches, vis_idx);
    auto preds = pair.student->reconstruct_masked(tokens, vis_idx, msk_idx);
    auto masked_tgt = torch::gather(targets, 1, msk_idx.unsqueeze(-1).expand({b, m, pv}));
    auto [l_rec, per_patch] = rec_loss(preds, masked_tgt);

    torch::Tensor l_pred = torch::zeros({}, x.options());
    if (cfg.w_pred > 0.0) {
        auto student_scores = pair.student->predict_difficulty(tokens, vis_idx);  // [B, N]
        auto gt_per_patch = per_patch.detach();
        torch::Tensor sum = torch::zeros({}, x.options());
        for (int64_t i = 0; i < b; ++i) {
            auto gt_full = torch::zeros({n}).scatter(0, msk_idx[i], gt_per_patch[i]);
            sum = sum + pred_loss(student_scores[i], gt_full, masks[static_cast<size_t>(i)]);
        }
        l_pred = sum / static_cast<double>(b);
    }

    auto total = total_pretrain_loss(l_rec, l_pred, cfg.w_pred);

    opt.zero_grad();
    total.backward();
    if (cfg.grad_clip > 0.0)
        torch::nn::utils::clip_grad_norm_(pair.student->parameters(), cfg.grad_clip);
    opt.step();
    pair.ema_update();

    StepMetrics sm;
    sm.l_rec = l_rec.item<double>();
    sm.l_pred = l_pred.item<double>();
    sm.l_total = total.item<double>();
    sm.alpha = alpha;
    sm.guided_count = masks[0].guided_count;
    sm.masked_count = m;
    return sm;
}

namespace {

nlohmann::json encoder_config_json(const EncoderConfig& e) {
    return {{"embed_dim", e.embed_dim}, {"depth", e.depth},      {"num_heads", e.num_heads},
            {"mlp_ratio", e.mlp_ratio}, {"patch_size", e.patch_size},
            {"grid", {e.grid[0], e.grid[1], e.grid[2]}},         {"droppath", e.droppath}};
}

void save_pretrain_checkpoint(const std::filesystem::path& dir, ModelPair& pair,
                              torch::optim::AdamW& opt, const nlohmann::json& meta) {
    std::map<std::string, torch::Tensor> tensors;
    for (const auto& item : pair.student->named_parameters())
        tensors["student." + item.key()] = item.value();
    for (const auto& item : pair.teacher->named_parameters())
        tensors["teacher." + item.key()] = item.value();
    auto& state = opt.state();
    for (const auto& item : pair.student->named_parameters()) {
        auto it = state.find(item.value().unsafeGetTensorImpl());
        if (it == state.end()) continue;
        auto& s = static_cast<torch::optim::AdamWParamState&>(*it->second);
        tensors["optim." + item.key() + ".exp_avg"] = s.exp_avg();
        tensors["optim." + item.key() + ".exp_avg_sq"] = s.exp_avg_sq();
        tensors["optim." + item.key() + ".step"] =
            torch::tensor(s.step(), torch::kInt64);
    }
    save_checkpoint(dir, tensors, meta);
}

void restore_pretrain_checkpoint(const LoadedCheckpoint& ck, ModelPair& pair,
                                 torch::optim::AdamW& opt) {
    torch::NoGradGuard ng;
    int n_student = load_by_prefix(ck.tensors, "student.", *pair.student, "");
    int n_teacher = load_by_prefix(ck.tensors, "teacher.", *pair.teacher, "");
    if (n_student == 0 || n_teacher == 0)
        throw std::runtime_error("resume: checkpoint carries no model parameters");
    auto& state = opt.state();
    for (const auto& item : pair.student->named_parameters()) {
        auto ea = ck.tensors.find("optim." + item.key() + ".exp_avg");
        if (ea == ck.tensors.end()) continue;
        auto st = std::make_unique<torch::optim::AdamWParamState>();
        st->exp_avg(ea->second.clone());
        st->exp_avg_sq(ck.tensors.at("optim." + item.key() + ".exp_avg_sq").clone());
        st->step(ck.tensors.at("optim." + item.key() + ".step").item<int64_t>());
        state[item.value().unsafeGetTensorImpl()] = std::move(st);
    }
}

}  // namespace

nlohmann::json pretrain_config_json(const PretrainConfig& c);

nlohmann::json pretrain_config_json(const PretrainConfig& c) {
    return {{"epochs", c.epochs},
            {"batch_size", c.batch_size},
            {"base_lr", c.base_lr},
            {"weight_decay", c.weight_decay},
            {"warmup_epochs", c.warmup_epochs},
            {"mask.ratio", c.mask_ratio},
            {"mask.alpha0", c.alpha0},
            {"mask.alphaT", c.alphaT},
            {"ema_momentum", c.ema_momentum},
            {"w_pred", c.w_pred},
            {"grad_clip", c.grad_clip},
            {"flip_prob", c.flip_prob},
            {"crop", c.crop},
            {"seed", c.seed}};
}

PretrainResult pretrain(const std::vector<Volume>& train, const ModelConfig& model,
                        const PretrainConfig& cfg, const std::filesystem::path& out_dir,
                        const std::filesystem::path& resume_from, int64_t run_epochs) {
    if (train.empty()) throw std::invalid_argument("pretrain: empty training set");
    if (cfg.batch_size < 1) throw std::invalid_argument("pretrain: batch_size must be >= 1");
    if (cfg.effective_warmup() >= cfg.epochs && cfg.epochs > 0)
        throw std::invalid_argument("pretrain: warmup_epochs must be < epochs");
    std::filesystem::create_directories(out_dir);

    torch::manual_seed(cfg.seed);
    ModelPair pair(model.encoder, model.reconstructor, model.predictor, cfg.ema_momentum);
    torch::optim::AdamW opt(pair.student->parameters(),
                            torch::optim::AdamWOptions(cfg.base_lr)
                                .betas({0.9, 0.95})
                                .weight_decay(cfg.weight_decay));

    int64_t start_epoch = 0;
    double best_rec = std::numeric_limits<double>::infinity();
    if (!resume_from.empty()) {
        auto ck = load_checkpoint(resume_from);
        restore_pretrain_checkpoint(ck, pair, opt);
        start_epoch = ck.meta.at("epoch").get<int64_t>() + 1;
        best_rec = ck.meta.value("best_rec", best_rec);
    }

    const int64_t spe =
        (static_cast<int64_t>(train.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = cfg.epochs * spe;
    const int64_t warmup_steps = cfg.effective_warmup() * spe;

    std::ofstream log(out_dir / "metrics.jsonl", std::ios::app);
    PretrainResult result;
    result.last_checkpoint = out_dir / "ckpt_last";
    result.best_checkpoint = out_dir / "ckpt_best";

    const int64_t end_epoch =
        run_epochs >= 0 ? std::min(cfg.epochs, start_epoch + run_epochs) : cfg.epochs;
    for (int64_t epoch = start_epoch; epoch < end_epoch; ++epoch) {
        torch::manual_seed(mix_seed(cfg.seed, kTorchStream, static_cast<uint64_t>(epoch)));
        std::vector<int64_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(mix_seed(cfg.seed, kOrderStream, static_cast<uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng() % i]);

        double sum_rec = 0.0, sum_pred = 0.0, last_lr = 0.0;
        int64_t guided = 0, masked = 0;
        double alpha = 0.0;
        for (int64_t s = 0; s < spe; ++s) {
            int64_t gstep = epoch * spe + s;
            last_lr = lr_at(gstep, total_steps, warmup_steps, cfg.base_lr);
            for (auto& group : opt.param_groups())
                static_cast<torch::optim::AdamWOptions&>(group.options()).lr(last_lr);

            std::vector<Volume> batch;
            for (int64_t i = s * cfg.batch_size;
                 i < std::min<int64_t>((s + 1) * cfg.batch_size,
                                       static_cast<int64_t>(train.size()));
                 ++i)
                batch.push_back(train[static_cast<size_t>(order[static_cast<size_t>(i)])]);

            auto sm = pretrain_step(pair, opt, batch, epoch, s, cfg);
            if (!std::isfinite(sm.l_total)) {
                nlohmann::json diag = {{"epoch", epoch},   {"step", s},
                                       {"l_rec", sm.l_rec}, {"l_pred", sm.l_pred},
                                       {"lr", last_lr},     {"alpha", sm.alpha}};
                std::ofstream(out_dir / "diagnostics.json") << diag.dump(2) << "\n";
                throw std::runtime_error("pretrain: non-finite loss at epoch " +
                                         std::to_string(epoch) + " step " +
                                         std::to_string(s));
            }
            sum_rec += sm.l_rec;
            sum_pred += sm.l_pred;
            guided = sm.guided_count;
            masked = sm.masked_count;
            alpha = sm.alpha;
        }

        nlohmann::json rec = {{"epoch", epoch},
                              {"lr", last_lr},
                              {"l_rec", sum_rec / static_cast<double>(spe)},
                              {"l_pred", sum_pred / static_cast<double>(spe)},
                              {"alpha", alpha},
                              {"guided_count", guided},
                              {"masked_count", masked}};
        log << rec.dump() << "\n";
        log.flush();
        result.log.push_back(rec);

        nlohmann::json meta = {{"epoch", epoch},
                               {"seed", cfg.seed},
                               {"best_rec", best_rec},
                               {"config", pretrain_config_json(cfg)},
                               {"encoder", encoder_config_json(model.encoder)},
                               {"schedule", {{"alpha0", cfg.alpha0},
                                             {"alphaT", cfg.alphaT},
                                             {"total_epochs", cfg.epochs},
                                             {"mask_ratio", cfg.mask_ratio}}}};
        save_pretrain_checkpoint(result.last_checkpoint, pair, opt, meta);
        double epoch_rec = sum_rec / static_cast<double>(spe);
        if (epoch_rec < best_rec) {
            best_rec = epoch_rec;
            meta["best_rec"] = best_rec;
            save_pretrain_checkpoint(result.best_checkpoint, pair, opt, meta);
        }
    }
    return result;
}

// --- fine-tuning ---

namespace {

double quick_mean_dsc(SegmentationNet& net, const std::vector<Volume>& val,
                      int num_classes, std::map<int, double>* per_class = nullptr) {
    torch::NoGradGuard ng;
    net->eval();
    std::map<int, double> acc;
    for (const auto& v : val) {
        auto logits = net->forward(v.data.unsqueeze(0));
        auto pred = logits.argmax(1).squeeze(0);
        for (int c = 1; c < num_classes; ++c)
            acc[c] += dsc(pred == c, v.labels == c);
    }
    double mean = 0.0;
    for (auto& [c, s] : acc) {
        s /= static_cast<double>(val.size());
        mean += s;
    }
    if (per_class) *per_class = acc;
    return acc.empty() ? 0.0 : mean / static_cast<double>(acc.size());
}

}  // namespace

FinetuneResult finetune(const std::vector<Volume>& train, const std::vector<Volume>& val,
                        const ModelConfig& model, int num_classes,
                        const FinetuneConfig& cfg,
                        const std::filesystem::path& pretrain_checkpoint,
                        const std::filesystem::path& out_dir) {
    if (train.empty()) throw std::invalid_argument("finetune: empty training set");
    for (const auto& v : train)
        if (v.has_labels() && v.labels.max().item<int64_t>() >= num_classes)
            throw std::invalid_argument("finetune: dataset class count exceeds net classes");
    std::filesystem::create_directories(out_dir);

    torch::manual_seed(cfg.seed);
    EncoderConfig enc = model.encoder;
    enc.droppath = cfg.droppath;
    SegmentationNet net(enc, num_classes);

    if (!cfg.from_scratch) {
        if (pretrain_checkpoint.empty())
            throw std::invalid_argument("finetune: missing checkpoint (or pass from_scratch)");
        auto ck = load_checkpoint(pretrain_checkpoint);
        int n = load_by_prefix(ck.tensors, "student.encoder.", *net, "encoder.");
        if (n == 0) throw std::runtime_error("finetune: checkpoint has no encoder weights");
    }

    // layer-wise lr decay: one param group per encoder block, plus embedding
    // at the earliest rate and everything else (decoder, head) at base rate
    auto scales = layer_lrs(1.0, cfg.layer_decay, enc.depth);
    std::vector<torch::optim::OptimizerParamGroup> groups;
    std::vector<double> group_scales;
    auto opts = [&](double) {
        return std::make_unique<torch::optim::AdamWOptions>(
            torch::optim::AdamWOptions(cfg.base_lr)
                .betas({0.9, 0.999})
                .weight_decay(cfg.weight_decay));
    };

    if (cfg.freeze_encoder)
        for (auto& p : net->encoder->parameters()) p.set_requires_grad(false);

    if (!cfg.freeze_encoder) {
        {
            std::vector<torch::Tensor> params = net->encoder->patch_embed->parameters();
            groups.emplace_back(params, opts(scales[0]));
            group_scales.push_back(scales[0]);
        }
        for (int64_t l = 0; l < enc.depth; ++l) {
            auto params = (*net->encoder->blocks)[static_cast<size_t>(l)]->parameters();
            groups.emplace_back(params, opts(scales[static_cast<size_t>(l)]));
            group_scales.push_back(scales[static_cast<size_t>(l)]);
        }
        {
            std::vector<torch::Tensor> params = net->encoder->norm->parameters();
            groups.emplace_back(params, opts(scales[static_cast<size_t>(enc.depth - 1)]));
            group_scales.push_back(scales[static_cast<size_t>(enc.depth - 1)]);
        }
    }
    {
        std::vector<torch::Tensor> rest;
        for (const auto& item : net->named_parameters())
            if (item.key().rfind("encoder.", 0) != 0) rest.push_back(item.value());
        groups.emplace_back(rest, opts(1.0));
        group_scales.push_back(1.0);
    }
    torch::optim::AdamW opt(groups, torch::optim::AdamWOptions(cfg.base_lr)
                                        .betas({0.9, 0.999})
                                        .weight_decay(cfg.weight_decay));

    const int64_t spe =
        (static_cast<int64_t>(train.size()) + cfg.batch_size - 1) / cfg.batch_size;
    const int64_t total_steps = cfg.epochs * spe;
    const int64_t warmup_steps = cfg.effective_warmup() * spe;

    std::ofstream log(out_dir / "metrics.jsonl", std::ios::app);
    FinetuneResult result;
    result.best_checkpoint = out_dir / "seg_best";

    std::map<std::string, torch::Tensor> best_params;
    for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        torch::manual_seed(mix_seed(cfg.seed, kTorchStream, static_cast<uint64_t>(epoch)));
        std::vector<int64_t> order(train.size());
        std::iota(order.begin(), order.end(), 0);
        std::mt19937_64 rng(mix_seed(cfg.seed, kOrderStream, static_cast<uint64_t>(epoch)));
        for (size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng() % i]);

        net->train();
        double sum_loss = 0.0, last_lr = 0.0;
        for (int64_t s = 0; s < spe; ++s) {
            int64_t gstep = epoch * spe + s;
            double scale = lr_at(gstep, total_steps, warmup_steps, 1.0);
            last_lr = cfg.base_lr * scale;
            auto& pgs = opt.param_groups();
            for (size_t gi = 0; gi < pgs.size(); ++gi)
                static_cast<torch::optim::AdamWOptions&>(pgs[gi].options())
                    .lr(cfg.base_lr * scale * group_scales[gi]);

            std::vector<torch::Tensor> data, labels;
            for (int64_t i = s * cfg.batch_size;
                 i < std::min<int64_t>((s + 1) * cfg.batch_size,
                                       static_cast<int64_t>(train.size()));
                 ++i) {
                uint64_t aug_seed =
                    mix_seed(cfg.seed, kAugStream ^ static_cast<uint64_t>(epoch),
                             static_cast<uint64_t>(s) * 8192 + static_cast<uint64_t>(i));
                auto v = augment_sample(train[static_cast<size_t>(
                                            order[static_cast<size_t>(i)])],
                                        0, cfg.flip_prob, aug_seed);
                data.push_back(v.data);
                labels.push_back(v.labels);
            }
            auto logits = net->forward(torch::stack(data));
            auto loss = seg_loss(logits, torch::stack(labels));
            opt.zero_grad();
            loss.backward();
            opt.step();
            double lv = loss.item<double>();
            if (!std::isfinite(lv))
                throw std::runtime_error("finetune: non-finite loss at epoch " +
                                         std::to_string(epoch));
            sum_loss += lv;
        }

        std::map<int, double> per_class;
        double mean_dsc = quick_mean_dsc(net, val.empty() ? train : val, num_classes,
                                         &per_class);
        nlohmann::json rec = {{"epoch", epoch},
                              {"lr", last_lr},
                              {"loss", sum_loss / static_cast<double>(spe)},
                              {"mean_dsc", mean_dsc}};
        for (const auto& [c, d] : per_class) rec["dsc"][std::to_string(c)] = d;
        log << rec.dump() << "\n";
        log.flush();
        result.log.push_back(rec);

        if (mean_dsc >= result.best_val_dsc) {
            result.best_val_dsc = mean_dsc;
            best_params.clear();
            for (const auto& item : net->named_parameters())
                best_params[item.key()] = item.value().detach().clone();
        }
    }

    {
        torch::NoGradGuard ng;
        auto params = net->named_parameters();
        for (const auto& [name, t] : best_params) params[name].copy_(t);
    }
    nlohmann::json meta = {{"num_classes", num_classes},
                           {"best_val_dsc", result.best_val_dsc},
                           {"seed", cfg.seed},
                           {"encoder", encoder_config_json(enc)}};
    std::map<std::string, torch::Tensor> tensors;
    for (const auto& item : net->named_parameters()) tensors[item.key()] = item.value();
    save_checkpoint(result.best_checkpoint, tensors, meta);
    return result;
}

std::pair<std::vector<MetricsReport>, MetricsReport> evaluate_net(
    SegmentationNet& net, const std::vector<Volume>& cases, int num_classes) {
    torch::NoGradGuard ng;
    net->eval();
    std::vector<MetricsReport> reports;
    for (size_t i = 0; i < cases.size(); ++i) {
        const auto& v = cases[i];
        auto logits = net->forward(v.data.unsqueeze(0));
        auto pred = logits.argmax(1).squeeze(0);
        reports.push_back(evaluate_case(pred, v.labels, num_classes, v.spacing,
                                        "case_" + std::to_string(i)));
    }
    return {reports, aggregate_reports(reports)};
}

// --- ablation ---

nlohmann::json AblationReport::to_json() const {
    nlohmann::json j;
    j["seed"] = seed;
    j["rows"] = nlohmann::json::array();
    for (const auto& a : arms) {
        nlohmann::json r = {{"label", a.label}, {"dsc", a.dsc}};
        if (a.hd95)
            r["hd95"] = *a.hd95;
        else
            r["hd95"] = nullptr;
        j["rows"].push_back(r);
    }
    return j;
}

std::string AblationReport::to_table() const {
    std::ostringstream os;
    os << std::left << std::setw(42) << "components" << std::setw(10) << "DSC"
       << std::setw(10) << "HD95" << "\n";
    os << std::fixed << std::setprecision(3);
    for (const auto& a : arms) {
        os << std::left << std::setw(42) << a.label << std::setw(10) << a.dsc;
        if (a.hd95)
            os << std::setw(10) << *a.hd95;
        else
            os << std::setw(10) << "n/a";
        os << "\n";
    }
    return os.str();
}

AblationReport ablate(const std::vector<Volume>& train, const std::vector<Volume>& test,
                      const ModelConfig& model, int num_classes,
                      const PretrainConfig& pre_cfg, const FinetuneConfig& ft_cfg,
                      const std::filesystem::path& out_dir) {
    struct ArmSpec {
        std::string name;
        std::string label;
        double w_pred;
        double alphaT;
    };
    // Table order: plain-MAE baseline, loss prediction only, full method.
    std::vector<ArmSpec> specs = {
        {"arm_baseline", "w/o pred loss, w/o learned masking", 0.0, 0.0},
        {"arm_pred_only", "w/o learned masking", pre_cfg.w_pred > 0 ? pre_cfg.w_pred : 1.0,
         0.0},
        {"arm_full", "full method", pre_cfg.w_pred > 0 ? pre_cfg.w_pred : 1.0,
         pre_cfg.alphaT},
    };

    AblationReport report;
    report.seed = pre_cfg.seed;
    nlohmann::json arm_configs = nlohmann::json::array();
    for (const auto& spec : specs) {
        PretrainConfig pc = pre_cfg;
        pc.w_pred = spec.w_pred;
        pc.alpha0 = 0.0;
        pc.alphaT = spec.alphaT;
        arm_configs.push_back(pretrain_config_json(pc));

        auto arm_dir = out_dir / spec.name;
        auto pre = pretrain(train, model, pc, arm_dir / "pretrain");
        auto ft = finetune(train, test, model, num_classes, ft_cfg, pre.last_checkpoint,
                           arm_dir / "finetune");

        EncoderConfig enc = model.encoder;
        enc.droppath = ft_cfg.droppath;
        SegmentationNet net(enc, num_classes);
        auto ck = load_checkpoint(ft.best_checkpoint);
        load_by_prefix(ck.tensors, "", *net, "");
        auto [reports, agg] = evaluate_net(net, test, num_classes);

        AblationArm arm;
        arm.label = spec.label;
        arm.dsc = agg.mean_dsc;
        arm.hd95 = agg.mean_hd95;
        report.arms.push_back(arm);
    }

    std::filesystem::create_directories(out_dir);
    auto j = report.to_json();
    j["arm_configs"] = arm_configs;
    std::ofstream(out_dir / "ablation.json") << j.dump(2) << "\n";
    std::ofstream(out_dir / "ablation.txt") << report.to_table();
    return report;
}

}  // namespace hpm
