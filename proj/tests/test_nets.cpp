#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "hpm/nets.hpp"

using namespace hpm;

namespace {

EncoderConfig tiny_encoder() {
    EncoderConfig cfg;
    cfg.embed_dim = 48;
    cfg.depth = 2;
    cfg.num_heads = 2;
    cfg.patch_size = 4;
    cfg.grid = {2, 2, 2};
    return cfg;
}

DecoderConfig tiny_decoder() {
    DecoderConfig cfg;
    cfg.dim = 24;
    cfg.depth = 1;
    cfg.num_heads = 2;
    return cfg;
}

}  // namespace

TEST_CASE("sincos_pos_embed_3d: shape, bounds, and distinct rows") {
    auto pe = sincos_pos_embed_3d({3, 4, 5}, 48);
    CHECK(pe.sizes() == torch::IntArrayRef({60, 48}));
    CHECK(pe.abs().max().item<double>() <= 1.0 + 1e-6);
    // every pair of grid positions gets a distinct embedding
    auto diff = (pe.unsqueeze(0) - pe.unsqueeze(1)).abs().sum(-1);
    diff.fill_diagonal_(1.0);
    CHECK(diff.min().item<double>() > 1e-4);
    CHECK_THROWS_AS(sincos_pos_embed_3d({2, 2, 2}, 16), std::invalid_argument);
}

TEST_CASE("encoder shape contract over visible subsets") {
    torch::manual_seed(0);
    auto cfg = tiny_encoder();
    ViTEncoder enc(cfg);
    enc->eval();
    auto patches = torch::randn({2, 5, cfg.patch_voxels()});
    auto pos = torch::tensor({0, 2, 3, 5, 7}, torch::kInt64);
    auto out = enc->forward(patches, pos);
    CHECK(out.sizes() == torch::IntArrayRef({2, 5, cfg.embed_dim}));
    auto states = enc->forward_features(patches, pos);
    CHECK(states.size() == static_cast<size_t>(cfg.depth));
    for (auto& s : states) CHECK(s.sizes() == torch::IntArrayRef({2, 5, cfg.embed_dim}));
}

TEST_CASE("encoder is equivariant to token order") {
    // presenting the same (patch, position) pairs in a different order
    // permutes the outputs accordingly
    torch::manual_seed(1);
    auto cfg = tiny_encoder();
    ViTEncoder enc(cfg);
    enc->eval();
    torch::NoGradGuard ng;
    auto patches = torch::randn({1, 4, cfg.patch_voxels()});
    auto pos = torch::tensor({1, 3, 4, 6}, torch::kInt64);
    auto out = enc->forward(patches, pos);

    auto perm = torch::tensor({2, 0, 3, 1}, torch::kInt64);
    auto out_p = enc->forward(patches.index_select(1, perm), pos.index_select(0, perm));
    auto back = out.index_select(1, perm);
    CHECK((out_p - back).abs().max().item<double>() < 1e-5);
}

TEST_CASE("positions change the encoding of identical patch content") {
    torch::manual_seed(2);
    auto cfg = tiny_encoder();
    ViTEncoder enc(cfg);
    enc->eval();
    torch::NoGradGuard ng;
    auto patch = torch::randn({1, 1, cfg.patch_voxels()});
    auto a = enc->forward(patch, torch::tensor({0}, torch::kInt64));
    auto b = enc->forward(patch, torch::tensor({7}, torch::kInt64));
    CHECK((a - b).abs().max().item<double>() > 1e-4);
}

TEST_CASE("attention mixes information across patches") {
    // finite-difference probe: perturbing one visible patch moves the
    // encoding of another
    torch::manual_seed(3);
    auto cfg = tiny_encoder();
    ViTEncoder enc(cfg);
    enc->eval();
    torch::NoGradGuard ng;
    auto patches = torch::randn({1, 3, cfg.patch_voxels()});
    auto pos = torch::tensor({0, 3, 5}, torch::kInt64);
    auto base = enc->forward(patches, pos);
    auto bumped = patches.clone();
    bumped.select(1, 0) += 0.5;
    auto after = enc->forward(bumped, pos);
    CHECK((after.select(1, 2) - base.select(1, 2)).abs().max().item<double>() > 1e-6);
}

TEST_CASE("masked decoder covers the full grid and uses the mask token") {
    torch::manual_seed(4);
    auto cfg = tiny_encoder();
    MaskedDecoder dec(cfg, tiny_decoder(), cfg.patch_voxels());
    dec->eval();
    torch::NoGradGuard ng;
    auto tokens = torch::randn({2, 3, cfg.embed_dim});
    auto visible = torch::tensor({0, 4, 6}, torch::kInt64);
    auto out = dec->forward_full(tokens, visible);
    CHECK(out.sizes() == torch::IntArrayRef({2, 8, cfg.patch_voxels()}));
    // changing the mask token moves masked-slot outputs but leaves a pure
    // function of visible slots alone is too strong (attention mixes), so
    // instead: different mask tokens give different grids
    auto before = out.clone();
    dec->mask_token.data() += 1.0;
    auto after = dec->forward_full(tokens, visible);
    CHECK((after - before).abs().max().item<double>() > 1e-4);
}

TEST_CASE("pretrain model: reconstruction and difficulty shapes") {
    torch::manual_seed(5);
    auto cfg = tiny_encoder();
    PretrainModel model(cfg, tiny_decoder(), tiny_decoder());
    model->eval();
    torch::NoGradGuard ng;
    auto visible = torch::tensor({0, 1, 5}, torch::kInt64);
    auto masked = torch::tensor({2, 3, 4, 6, 7}, torch::kInt64);
    auto patches = torch::randn({2, 3, cfg.patch_voxels()});
    auto tokens = model->encoder->forward(patches, visible);
    auto rec = model->reconstruct_masked(tokens, visible, masked);
    CHECK(rec.sizes() == torch::IntArrayRef({2, 5, cfg.patch_voxels()}));
    auto diff = model->predict_difficulty(tokens, visible);
    CHECK(diff.sizes() == torch::IntArrayRef({2, 8}));
}

TEST_CASE("sync_teacher makes teacher and student agree exactly") {
    torch::manual_seed(6);
    auto cfg = tiny_encoder();
    ModelPair pair(cfg, tiny_decoder(), tiny_decoder(), 0.999);
    pair.teacher->eval();
    pair.student->eval();
    torch::NoGradGuard ng;
    auto patches = torch::randn({1, 8, cfg.patch_voxels()});
    auto pos = torch::arange(8, torch::kInt64);
    auto st = pair.student->encoder->forward(patches, pos);
    auto te = pair.teacher->encoder->forward(patches, pos);
    CHECK((st - te).abs().max().item<double>() == 0.0);
    auto sd = pair.student->predict_difficulty(st, pos);
    auto td = pair.teacher->predict_difficulty(te, pos);
    CHECK((sd - td).abs().max().item<double>() == 0.0);
}

TEST_CASE("ema_update arithmetic at the extremes and in between") {
    torch::manual_seed(7);
    auto cfg = tiny_encoder();

    // m = 1: the teacher is frozen
    {
        ModelPair pair(cfg, tiny_decoder(), tiny_decoder(), 1.0);
        auto before = pair.teacher->encoder->patch_embed->weight.clone();
        torch::NoGradGuard ng;
        pair.student->encoder->patch_embed->weight += 1.0;
        pair.ema_update();
        CHECK((pair.teacher->encoder->patch_embed->weight - before)
                  .abs()
                  .max()
                  .item<double>() == 0.0);
    }
    // m = 0: the teacher copies the student
    {
        ModelPair pair(cfg, tiny_decoder(), tiny_decoder(), 0.0);
        torch::NoGradGuard ng;
        pair.student->encoder->patch_embed->weight += 1.0;
        pair.ema_update();
        CHECK((pair.teacher->encoder->patch_embed->weight -
               pair.student->encoder->patch_embed->weight)
                  .abs()
                  .max()
                  .item<double>() == 0.0);
    }
    // m = 0.999: exact convex combination, checked against a manual copy
    {
        ModelPair pair(cfg, tiny_decoder(), tiny_decoder(), 0.999);
        auto t0 = pair.teacher->encoder->patch_embed->weight.clone();
        torch::NoGradGuard ng;
        pair.student->encoder->patch_embed->weight += 0.5;
        auto s = pair.student->encoder->patch_embed->weight.clone();
        pair.ema_update();
        auto want = 0.999 * t0 + 0.001 * s;
        CHECK((pair.teacher->encoder->patch_embed->weight - want)
                  .abs()
                  .max()
                  .item<double>() < 1e-7);
    }
}

TEST_CASE("teacher parameters never require grad") {
    auto cfg = tiny_encoder();
    ModelPair pair(cfg, tiny_decoder(), tiny_decoder(), 0.999);
    for (const auto& p : pair.teacher->parameters()) CHECK_FALSE(p.requires_grad());
    bool any = false;
    for (const auto& p : pair.student->parameters()) any |= p.requires_grad();
    CHECK(any);
}

TEST_CASE("segmentation net: shape contract and patch-size guard") {
    EncoderConfig cfg;
    cfg.embed_dim = 48;
    cfg.depth = 4;
    cfg.num_heads = 2;
    cfg.patch_size = 16;
    cfg.grid = {2, 2, 2};
    SegmentationNet net(cfg, 5);
    net->eval();
    torch::NoGradGuard ng;
    auto vol = torch::rand({1, 32, 32, 32});
    auto logits = net->forward(vol);
    CHECK(logits.sizes() == torch::IntArrayRef({1, 5, 32, 32, 32}));

    auto single = segment(net, torch::rand({32, 32, 32}));
    CHECK(single.sizes() == torch::IntArrayRef({32, 32, 32, 5}));

    auto bad = cfg;
    bad.patch_size = 8;
    CHECK_THROWS_AS(SegmentationNet(bad, 5), std::invalid_argument);
}

TEST_CASE("droppath is identity in eval mode") {
    torch::manual_seed(9);
    Block b(32, 2, 4.0, /*droppath=*/0.9);
    b->eval();
    torch::NoGradGuard ng;
    auto x = torch::randn({2, 4, 32});
    auto a1 = b->forward(x);
    auto a2 = b->forward(x);
    CHECK((a1 - a2).abs().max().item<double>() == 0.0);
}
