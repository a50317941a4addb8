// hpm3d: hard-patch-mining masked-image-modeling pretraining and UNETR-style
// fine-tuning for volumetric segmentation, desk scale.
//
// Subcommands: gen-data, pretrain, finetune, evaluate, reconstruct, ablate.
// Settings come from a JSON config file; any --section.key value token
// overrides the file.

#include <torch/torch.h>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "CLI11.hpp"
#include "hpm/checkpoint.hpp"
#include "hpm/dataset.hpp"
#include "hpm/losses.hpp"
#include "hpm/masking.hpp"
#include "hpm/metrics.hpp"
#include "hpm/nets.hpp"
#include "hpm/patching.hpp"
#include "hpm/rng.hpp"
#include "hpm/trainer.hpp"
#include "hpm/volume.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json default_config() {
    return {
        {"seed", 0},
        {"threads", 0},  // 0: library default; 1: deterministic single-thread mode
        {"data",
         {{"dir", ""},
          {"num_cases", 32},
          {"grid", 64},
          {"num_organs", 4},
          {"noise_sigma", 0.02},
          {"train_fraction", 0.75},
          {"val_fraction", 0.0},
          {"clip_lo", 0.0},
          {"clip_hi", 1.0}}},
        {"model",
         {{"embed_dim", 192},
          {"depth", 6},
          {"heads", 3},
          {"mlp_ratio", 4.0},
          {"patch", 16},
          {"dec_dim", 96},
          {"dec_depth", 2},
          {"dec_heads", 3}}},
        {"mask", {{"ratio", 0.75}, {"alpha0", 0.0}, {"alphaT", 0.5}}},
        {"pretrain",
         {{"epochs", 30},
          {"batch_size", 4},
          {"base_lr", 1.5e-4},
          {"weight_decay", 0.05},
          {"warmup_epochs", -1},
          {"ema_momentum", 0.999},
          {"w_pred", 1.0},
          {"grad_clip", 3.0},
          {"flip_prob", 0.5},
          {"crop", 0}}},
        {"finetune",
         {{"epochs", 30},
          {"batch_size", 2},
          {"base_lr", 8e-4},
          {"weight_decay", 0.05},
          {"layer_decay", 0.75},
          {"droppath", 0.1},
          {"warmup_epochs", -1},
          {"flip_prob", 0.5}}},
        {"reconstruct", {{"depths", {16, 32, 48}}, {"alpha", 0.0}}},
    };
}

json* resolve_path(json& root, const std::string& dotted, bool create) {
    json* cur = &root;
    size_t pos = 0;
    while (true) {
        size_t dot = dotted.find('.', pos);
        std::string key = dotted.substr(pos, dot - pos);
        if (dot == std::string::npos) {
            if (!create && !cur->contains(key)) return nullptr;
            return &(*cur)[key];
        }
        if (!create && !cur->contains(key)) return nullptr;
        cur = &(*cur)[key];
        pos = dot + 1;
    }
}

// Remaining tokens of the form --a.b value / --a.b=value override the config.
void apply_overrides(json& cfg, std::vector<std::string> extras) {
    // some CLI11 versions hand extras back in reverse order
    if (!extras.empty() && extras.front().rfind("--", 0) != 0 &&
        extras.back().rfind("--", 0) == 0)
        std::reverse(extras.begin(), extras.end());
    for (size_t i = 0; i < extras.size(); ++i) {
        std::string tok = extras[i];
        if (tok.rfind("--", 0) != 0)
            throw CLI::ParseError("unexpected argument: " + tok, 1);
        tok = tok.substr(2);
        std::string key, value;
        auto eq = tok.find('=');
        if (eq != std::string::npos) {
            key = tok.substr(0, eq);
            value = tok.substr(eq + 1);
        } else {
            key = tok;
            if (i + 1 >= extras.size())
                throw CLI::ParseError("missing value for --" + key, 1);
            value = extras[++i];
        }
        json* slot = resolve_path(cfg, key, false);
        if (slot == nullptr)
            throw CLI::ParseError("unknown config key: " + key, 1);
        try {
            *slot = json::parse(value);
        } catch (const json::parse_error&) {
            *slot = value;  // plain string
        }
    }
}

json load_config(const std::string& config_file, const std::vector<std::string>& extras,
                 uint64_t seed_override, bool has_seed) {
    json cfg = default_config();
    if (!config_file.empty()) {
        std::ifstream f(config_file);
        if (!f) throw std::runtime_error("cannot open config file " + config_file);
        cfg.merge_patch(json::parse(f));
    }
    apply_overrides(cfg, extras);
    if (has_seed) cfg["seed"] = seed_override;
    return cfg;
}

void apply_threads(const json& cfg) {
    int64_t t = cfg.value("threads", 0);
    if (t == 1)
        hpm::set_single_threaded();
    else if (t > 1)
        at::set_num_threads(static_cast<int>(t));
}

// Every run directory keeps the exact resolved config and seeds used.
void echo_config(const json& cfg, const fs::path& out) {
    fs::create_directories(out);
    std::ofstream(out / "config.json") << cfg.dump(2) << "\n";
}

hpm::ModelConfig model_config_from(const json& cfg, int64_t data_grid) {
    const auto& m = cfg.at("model");
    hpm::EncoderConfig enc;
    enc.embed_dim = m.at("embed_dim");
    enc.depth = m.at("depth");
    enc.num_heads = m.at("heads");
    enc.mlp_ratio = m.at("mlp_ratio");
    enc.patch_size = m.at("patch");
    if (data_grid % enc.patch_size != 0)
        throw std::runtime_error("volume size " + std::to_string(data_grid) +
                                 " not divisible by patch size " +
                                 std::to_string(enc.patch_size));
    int64_t g = data_grid / enc.patch_size;
    enc.grid = {g, g, g};
    hpm::DecoderConfig dec{m.at("dec_dim"), m.at("dec_depth"), m.at("dec_heads"),
                           m.value("mlp_ratio", 4.0)};
    return {enc, dec, dec};
}

hpm::PretrainConfig pretrain_config_from(const json& cfg) {
    const auto& p = cfg.at("pretrain");
    const auto& mk = cfg.at("mask");
    hpm::PretrainConfig pc;
    pc.epochs = p.at("epochs");
    pc.batch_size = p.at("batch_size");
    pc.base_lr = p.at("base_lr");
    pc.weight_decay = p.at("weight_decay");
    pc.warmup_epochs = p.at("warmup_epochs");
    pc.mask_ratio = mk.at("ratio");
    pc.alpha0 = mk.at("alpha0");
    pc.alphaT = mk.at("alphaT");
    pc.ema_momentum = p.at("ema_momentum");
    pc.w_pred = p.at("w_pred");
    pc.grad_clip = p.at("grad_clip");
    pc.flip_prob = p.at("flip_prob");
    pc.crop = p.at("crop");
    pc.seed = cfg.at("seed");
    return pc;
}

hpm::FinetuneConfig finetune_config_from(const json& cfg) {
    const auto& f = cfg.at("finetune");
    hpm::FinetuneConfig fc;
    fc.epochs = f.at("epochs");
    fc.batch_size = f.at("batch_size");
    fc.base_lr = f.at("base_lr");
    fc.weight_decay = f.at("weight_decay");
    fc.layer_decay = f.at("layer_decay");
    fc.droppath = f.at("droppath");
    fc.warmup_epochs = f.at("warmup_epochs");
    fc.flip_prob = f.at("flip_prob");
    fc.seed = cfg.at("seed");
    return fc;
}

std::vector<hpm::Volume> load_preprocessed(const json& cfg, const std::string& split) {
    const auto& d = cfg.at("data");
    auto vols = hpm::load_split(d.at("dir").get<std::string>(), split);
    float lo = d.at("clip_lo"), hi = d.at("clip_hi");
    for (auto& v : vols) v = hpm::preprocess(v, lo, hi);
    return vols;
}

int64_t dataset_grid(const json& cfg) {
    const auto& d = cfg.at("data");
    auto m = hpm::load_manifest(d.at("dir").get<std::string>());
    auto v = hpm::load_volume(fs::path(d.at("dir").get<std::string>()) / m.case_ids.at(0));
    return v.dims()[0];
}

// --- subcommands ---

int cmd_gen_data(const json& cfg, const fs::path& out, bool force) {
    const auto& d = cfg.at("data");
    hpm::DatasetSpec spec;
    spec.num_cases = d.at("num_cases");
    spec.grid_size = d.at("grid");
    spec.num_organs = d.at("num_organs");
    spec.noise_sigma = d.at("noise_sigma");
    spec.train_fraction = d.at("train_fraction");
    spec.val_fraction = d.at("val_fraction");
    spec.seed = cfg.at("seed");
    auto m = hpm::generate_dataset(spec, out, force);
    echo_config(cfg, out);
    int n_train = 0, n_val = 0, n_test = 0;
    for (const auto& s : m.splits)
        s == "train" ? ++n_train : (s == "val" ? ++n_val : ++n_test);
    std::cout << "wrote " << m.case_ids.size() << " cases to " << out << " (train "
              << n_train << ", val " << n_val << ", test " << n_test << ")\n";
    return 0;
}

int cmd_pretrain(const json& cfg, const fs::path& out, bool dry_run,
                 const std::string& resume) {
    auto train = load_preprocessed(cfg, "train");
    if (train.empty()) throw std::runtime_error("no training cases in dataset");
    auto model = model_config_from(cfg, train[0].dims()[0]);
    auto pc = pretrain_config_from(cfg);
    echo_config(cfg, out);

    if (dry_run) {
        torch::manual_seed(pc.seed);
        hpm::ModelPair pair(model.encoder, model.reconstructor, model.predictor,
                            pc.ema_momentum);
        torch::optim::AdamW opt(pair.student->parameters(),
                                torch::optim::AdamWOptions(pc.base_lr)
                                    .betas({0.9, 0.95})
                                    .weight_decay(pc.weight_decay));
        std::vector<hpm::Volume> batch(train.begin(),
                                       train.begin() + std::min<size_t>(train.size(),
                                                                        pc.batch_size));
        for (int64_t s = 0; s < 2; ++s) {
            auto sm = hpm::pretrain_step(pair, opt, batch, 0, s, pc);
            std::cout << "dry-run step " << s << ": l_rec " << sm.l_rec << " l_pred "
                      << sm.l_pred << " masked " << sm.masked_count << "\n";
        }
        return 0;
    }

    auto res = hpm::pretrain(train, model, pc, out, resume);
    std::cout << "pretraining done; last checkpoint " << res.last_checkpoint
              << ", best checkpoint " << res.best_checkpoint << "\n";
    return 0;
}

int cmd_finetune(const json& cfg, const fs::path& out, const std::string& checkpoint,
                 bool from_scratch) {
    auto train = load_preprocessed(cfg, "train");
    auto val = load_preprocessed(cfg, "val");
    auto test = load_preprocessed(cfg, "test");
    auto manifest = hpm::load_manifest(cfg.at("data").at("dir").get<std::string>());
    auto model = model_config_from(cfg, train.at(0).dims()[0]);
    auto fc = finetune_config_from(cfg);
    fc.from_scratch = from_scratch;
    if (!from_scratch && checkpoint.empty())
        throw std::runtime_error("finetune needs --checkpoint or --from-scratch");
    echo_config(cfg, out);

    auto res = hpm::finetune(train, val.empty() ? test : val, model,
                             manifest.num_classes, fc, checkpoint, out);

    hpm::EncoderConfig enc = model.encoder;
    enc.droppath = fc.droppath;
    hpm::SegmentationNet net(enc, manifest.num_classes);
    auto ck = hpm::load_checkpoint(res.best_checkpoint);
    hpm::load_by_prefix(ck.tensors, "", *net, "");
    auto [reports, agg] = hpm::evaluate_net(net, test, manifest.num_classes);

    json rep;
    rep["aggregate"] = agg.to_json();
    for (const auto& r : reports) rep["cases"].push_back(r.to_json());
    std::ofstream(out / "report.json") << rep.dump(2) << "\n";
    std::ofstream table(out / "report.txt");
    table << agg.to_table(manifest.class_names);
    for (const auto& r : reports) table << r.to_table(manifest.class_names);
    std::cout << agg.to_table(manifest.class_names);
    std::cout << "report written to " << (out / "report.json") << "\n";
    return 0;
}

int cmd_evaluate(const json& cfg, const fs::path& out, const std::string& checkpoint) {
    auto test = load_preprocessed(cfg, "test");
    auto manifest = hpm::load_manifest(cfg.at("data").at("dir").get<std::string>());
    auto model = model_config_from(cfg, test.at(0).dims()[0]);
    echo_config(cfg, out);

    auto ck = hpm::load_checkpoint(checkpoint);
    hpm::EncoderConfig enc = model.encoder;
    hpm::SegmentationNet net(enc, manifest.num_classes);
    if (hpm::load_by_prefix(ck.tensors, "", *net, "") == 0)
        throw std::runtime_error("checkpoint has no segmentation weights");
    auto [reports, agg] = hpm::evaluate_net(net, test, manifest.num_classes);

    json rep;
    rep["aggregate"] = agg.to_json();
    for (const auto& r : reports) rep["cases"].push_back(r.to_json());
    std::ofstream(out / "report.json") << rep.dump(2) << "\n";
    std::cout << agg.to_table(manifest.class_names);
    return 0;
}

cv::Mat slice_to_mat(const torch::Tensor& slice) {
    auto s = slice.contiguous();
    cv::Mat m(static_cast<int>(s.size(0)), static_cast<int>(s.size(1)), CV_32F,
              const_cast<float*>(s.data_ptr<float>()));
    cv::Mat out;
    m.convertTo(out, CV_8U, 255.0);
    return out.clone();
}

int cmd_reconstruct(const json& cfg, const fs::path& out, const std::string& checkpoint,
                    const std::string& case_id) {
    const auto& ddir = cfg.at("data").at("dir").get<std::string>();
    auto v = hpm::load_volume(fs::path(ddir) / case_id);
    v = hpm::preprocess(v, cfg.at("data").at("clip_lo"), cfg.at("data").at("clip_hi"));
    auto model = model_config_from(cfg, v.dims()[0]);
    echo_config(cfg, out);

    torch::manual_seed(cfg.at("seed").get<uint64_t>());
    hpm::ModelPair pair(model.encoder, model.reconstructor, model.predictor, 0.999);
    auto ck = hpm::load_checkpoint(checkpoint);
    if (hpm::load_by_prefix(ck.tensors, "student.", *pair.student, "") == 0)
        throw std::runtime_error("checkpoint has no student weights");
    hpm::load_by_prefix(ck.tensors, "teacher.", *pair.teacher, "");
    pair.student->eval();
    pair.teacher->eval();

    const int64_t p = model.encoder.patch_size;
    const int64_t n = model.encoder.num_patches();
    auto ps = hpm::patchify(v, p);
    auto targets = hpm::normalize_targets(ps, 1e-6);
    auto all_pos = torch::arange(n, torch::kInt64);

    torch::NoGradGuard ng;
    double alpha = cfg.at("reconstruct").at("alpha");
    torch::Tensor scores = torch::zeros({n});
    if (alpha > 0.0) {
        auto t_tokens = pair.teacher->encoder->forward(ps.patches.unsqueeze(0), all_pos);
        scores = pair.teacher->predict_difficulty(t_tokens, all_pos).squeeze(0);
    }
    auto mask = hpm::generate_mask(scores, alpha, cfg.at("mask").at("ratio"),
                                   cfg.at("seed").get<uint64_t>());
    auto vis = torch::tensor(mask.visible_indices(), torch::kInt64);
    auto msk = torch::tensor(mask.masked_indices, torch::kInt64);

    auto tokens = pair.student->encoder->forward(
        ps.patches.index_select(0, vis).unsqueeze(0), vis);
    auto preds = pair.student->reconstruct_masked(tokens, vis, msk).squeeze(0);  // [M,P^3]
    // undo per-patch normalization with the target stats
    auto denorm = preds * targets.std.index_select(0, msk) +
                  targets.mean.index_select(0, msk);

    // masked row: masked patches blacked out; recon row: visible patches
    // pasted back over the model output
    auto masked_patches = ps.patches.clone();
    masked_patches.index_copy_(0, msk, torch::zeros({msk.size(0), p * p * p}));
    auto recon_patches = ps.patches.clone();
    recon_patches.index_copy_(0, msk, denorm);

    auto masked_vol = hpm::unpatchify_tensor(masked_patches, ps.config);
    auto recon_vol = hpm::unpatchify_tensor(recon_patches, ps.config);

    int count = 0;
    for (int64_t d : cfg.at("reconstruct").at("depths").get<std::vector<int64_t>>()) {
        if (d < 0 || d >= v.dims()[2]) continue;
        std::vector<cv::Mat> rows = {
            slice_to_mat(v.data.select(2, d)),
            slice_to_mat(masked_vol.select(2, d)),
            slice_to_mat(recon_vol.select(2, d).clamp(0, 1)),
        };
        cv::Mat img;
        cv::vconcat(rows, img);
        auto file = out / ("slice_d" + std::to_string(d) + ".png");
        cv::imwrite(file.string(), img);
        ++count;
    }
    std::cout << "wrote " << count << " slice images to " << out << "\n";
    return 0;
}

int cmd_ablate(const json& cfg, const fs::path& out) {
    auto train = load_preprocessed(cfg, "train");
    auto test = load_preprocessed(cfg, "test");
    auto manifest = hpm::load_manifest(cfg.at("data").at("dir").get<std::string>());
    auto model = model_config_from(cfg, train.at(0).dims()[0]);
    echo_config(cfg, out);

    auto report = hpm::ablate(train, test.empty() ? train : test, model,
                              manifest.num_classes, pretrain_config_from(cfg),
                              finetune_config_from(cfg), out);
    std::cout << report.to_table();
    std::cout << "ablation report written to " << (out / "ablation.json") << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hard-patch-mining masked pretraining for 3D segmentation"};
    app.require_subcommand(1);

    std::string config_file, data_dir, checkpoint, resume, case_id, out_dir = "runs/run";
    uint64_t seed = 0;
    bool dry_run = false, force = false, from_scratch = false;

    app.add_option("--config", config_file, "JSON config file");
    app.add_option("--out", out_dir, "output directory");
    auto* seed_opt = app.add_option("--seed", seed, "master RNG seed");
    app.add_option("--data-dir", data_dir, "dataset directory (overrides data.dir)");
    app.add_flag("--dry-run", dry_run, "run two steps and exit");
    app.add_flag("--force", force, "overwrite non-empty output");
    app.add_flag("--from-scratch", from_scratch, "skip pretrained weights");
    app.add_option("--checkpoint", checkpoint, "checkpoint directory");
    app.add_option("--resume", resume, "resume pretraining from checkpoint");
    app.add_option("--case", case_id, "case id for reconstruct");

    auto* gen = app.add_subcommand("gen-data", "generate a phantom dataset");
    auto* pre = app.add_subcommand("pretrain", "masked pretraining");
    auto* fin = app.add_subcommand("finetune", "segmentation fine-tuning");
    auto* eva = app.add_subcommand("evaluate", "evaluate a segmentation checkpoint");
    auto* rec = app.add_subcommand("reconstruct", "dump reconstruction slices");
    auto* abl = app.add_subcommand("ablate", "three-arm ablation");
    app.allow_extras();
    for (auto* sc : {gen, pre, fin, eva, rec, abl}) {
        sc->allow_extras();
        sc->fallthrough();  // root flags may appear after the subcommand name
    }

    CLI11_PARSE(app, argc, argv);

    try {
        auto* sub = app.get_subcommands().front();
        json cfg = load_config(config_file, app.remaining(true), seed,
                               seed_opt->count() > 0);
        if (!data_dir.empty()) cfg["data"]["dir"] = data_dir;
        apply_threads(cfg);

        if (sub == gen) return cmd_gen_data(cfg, out_dir, force);
        if (sub == pre) return cmd_pretrain(cfg, out_dir, dry_run, resume);
        if (sub == fin) return cmd_finetune(cfg, out_dir, checkpoint, from_scratch);
        if (sub == eva) return cmd_evaluate(cfg, out_dir, checkpoint);
        if (sub == rec) return cmd_reconstruct(cfg, out_dir, checkpoint, case_id);
        if (sub == abl) return cmd_ablate(cfg, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
