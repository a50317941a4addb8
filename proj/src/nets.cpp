#include "hpm/nets.hpp"

#include <cmath>
#include <stdexcept>

namespace hpm {

torch::Tensor sincos_pos_embed_3d(const std::array<int64_t, 3>& grid, int64_t dim) {
    if (dim % 6 != 0)
        throw std::invalid_argument("sincos_pos_embed_3d: dim must be divisible by 6");
    const int64_t axis_dim = dim / 3;
    const int64_t half = axis_dim / 2;

    auto omega = torch::pow(10000.0, -torch::arange(half, torch::kFloat64) /
                                         static_cast<double>(half));

    auto axis_embed = [&](int64_t extent) {
        auto pos = torch::arange(extent, torch::kFloat64);
        auto args = pos.unsqueeze(1) * omega.unsqueeze(0);  // [extent, half]
        return torch::cat({args.sin(), args.cos()}, 1);     // [extent, axis_dim]
    };

    auto eh = axis_embed(grid[0]);
    auto ew = axis_embed(grid[1]);
    auto ed = axis_embed(grid[2]);

    const int64_t n = grid[0] * grid[1] * grid[2];
    auto out = torch::empty({n, dim}, torch::kFloat64);
    int64_t idx = 0;
    for (int64_t i = 0; i < grid[0]; ++i)
        for (int64_t j = 0; j < grid[1]; ++j)
            for (int64_t k = 0; k < grid[2]; ++k) {
                out[idx].slice(0, 0, axis_dim) = eh[i];
                out[idx].slice(0, axis_dim, 2 * axis_dim) = ew[j];
                out[idx].slice(0, 2 * axis_dim, dim) = ed[k];
                ++idx;
            }
    return out.to(torch::kFloat32);
}

// --- Attention ---

AttentionImpl::AttentionImpl(int64_t dim, int64_t num_heads) : heads(num_heads) {
    if (dim % num_heads != 0)
        throw std::invalid_argument("Attention: dim not divisible by num_heads");
    scale = 1.0 / std::sqrt(static_cast<double>(dim / num_heads));
    qkv = register_module("qkv", nn::Linear(dim, 3 * dim));
    proj = register_module("proj", nn::Linear(dim, dim));
}

torch::Tensor AttentionImpl::forward(torch::Tensor x) {
    const int64_t b = x.size(0), t = x.size(1), c = x.size(2);
    auto qkv_out = qkv(x).reshape({b, t, 3, heads, c / heads}).permute({2, 0, 3, 1, 4});
    auto q = qkv_out[0], k = qkv_out[1], v = qkv_out[2];  // [b, h, t, d]
    auto att = torch::softmax(torch::matmul(q, k.transpose(-2, -1)) * scale, -1);
    auto out = torch::matmul(att, v).transpose(1, 2).reshape({b, t, c});
    return proj(out);
}

// --- Block ---

BlockImpl::BlockImpl(int64_t dim, int64_t num_heads, double mlp_ratio, double droppath)
    : droppath_prob(droppath) {
    norm1 = register_module("norm1", nn::LayerNorm(nn::LayerNormOptions({dim})));
    norm2 = register_module("norm2", nn::LayerNorm(nn::LayerNormOptions({dim})));
    attn = register_module("attn", Attention(dim, num_heads));
    auto hidden = static_cast<int64_t>(std::llround(dim * mlp_ratio));
    fc1 = register_module("fc1", nn::Linear(dim, hidden));
    fc2 = register_module("fc2", nn::Linear(hidden, dim));
}

torch::Tensor BlockImpl::drop_path(torch::Tensor x) {
    if (!is_training() || droppath_prob <= 0.0) return x;
    auto keep = torch::rand({x.size(0), 1, 1}, x.options()).ge(droppath_prob).to(x.dtype());
    return x * keep / (1.0 - droppath_prob);
}

torch::Tensor BlockImpl::forward(torch::Tensor x) {
    x = x + drop_path(attn(norm1(x)));
    x = x + drop_path(fc2(torch::gelu(fc1(norm2(x)))));
    return x;
}

// --- ViTEncoder ---

ViTEncoderImpl::ViTEncoderImpl(const EncoderConfig& cfg_) : cfg(cfg_) {
    patch_embed = register_module("patch_embed",
                                  nn::Linear(cfg.patch_voxels(), cfg.embed_dim));
    norm = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({cfg.embed_dim})));
    blocks = register_module("blocks", nn::ModuleList());
    for (int64_t i = 0; i < cfg.depth; ++i) {
        // stochastic depth rate grows linearly with depth
        double dp = cfg.depth > 1
                        ? cfg.droppath * static_cast<double>(i) /
                              static_cast<double>(cfg.depth - 1)
                        : cfg.droppath;
        blocks->push_back(Block(cfg.embed_dim, cfg.num_heads, cfg.mlp_ratio, dp));
    }
    pos_embed = register_buffer("pos_embed", sincos_pos_embed_3d(cfg.grid, cfg.embed_dim));
}

torch::Tensor ViTEncoderImpl::gather_pos(const torch::Tensor& positions,
                                         int64_t batch) const {
    if (positions.dim() == 1)
        return pos_embed.index_select(0, positions).unsqueeze(0);
    if (positions.size(0) != batch)
        throw std::invalid_argument("encoder: positions batch mismatch");
    auto flat = pos_embed.index_select(0, positions.reshape(-1));
    return flat.view({batch, positions.size(1), cfg.embed_dim});
}

std::vector<torch::Tensor> ViTEncoderImpl::forward_features(
    const torch::Tensor& patches, const torch::Tensor& positions) {
    if (patches.size(-1) != cfg.patch_voxels())
        throw std::invalid_argument("encoder: patch vector length mismatch");
    int64_t t = positions.dim() == 1 ? positions.size(0) : positions.size(1);
    if (patches.size(1) != t)
        throw std::invalid_argument("encoder: position/patch count mismatch");
    auto x = patch_embed(patches) + gather_pos(positions, patches.size(0));
    std::vector<torch::Tensor> states;
    states.reserve(static_cast<size_t>(cfg.depth));
    for (auto& block : *blocks) {
        x = block->as<BlockImpl>()->forward(x);
        states.push_back(x);
    }
    return states;
}

torch::Tensor ViTEncoderImpl::forward(const torch::Tensor& patches,
                                      const torch::Tensor& positions) {
    return norm(forward_features(patches, positions).back());
}

// --- MaskedDecoder ---

MaskedDecoderImpl::MaskedDecoderImpl(const EncoderConfig& enc, const DecoderConfig& dec,
                                     int64_t out_dim)
    : num_patches(enc.num_patches()) {
    embed = register_module("embed", nn::Linear(enc.embed_dim, dec.dim));
    head = register_module("head", nn::Linear(dec.dim, out_dim));
    norm = register_module("norm", nn::LayerNorm(nn::LayerNormOptions({dec.dim})));
    blocks = register_module("blocks", nn::ModuleList());
    for (int64_t i = 0; i < dec.depth; ++i)
        blocks->push_back(Block(dec.dim, dec.num_heads, dec.mlp_ratio));
    mask_token = register_parameter("mask_token", torch::randn({1, 1, dec.dim}) * 0.02);
    pos_embed = register_buffer("pos_embed", sincos_pos_embed_3d(enc.grid, dec.dim));
}

torch::Tensor MaskedDecoderImpl::forward_full(const torch::Tensor& tokens,
                                              const torch::Tensor& visible) {
    const int64_t b = tokens.size(0);
    const int64_t dim = mask_token.size(-1);
    auto vis = visible.dim() == 1 ? visible.unsqueeze(0).expand({b, visible.size(0)})
                                  : visible;
    if (vis.size(1) != tokens.size(1))
        throw std::invalid_argument("decoder: mask/embedding inconsistency");
    auto e = embed(tokens);
    auto base = mask_token.expand({b, num_patches, dim});
    auto idx = vis.unsqueeze(-1).expand({b, vis.size(1), dim});
    auto full = torch::scatter(base, 1, idx, e);
    full = full + pos_embed.unsqueeze(0);
    for (auto& block : *blocks) full = block->as<BlockImpl>()->forward(full);
    return head(norm(full));
}

// --- PretrainModel ---

PretrainModelImpl::PretrainModelImpl(const EncoderConfig& enc, const DecoderConfig& rec_dec,
                                     const DecoderConfig& diff_dec) {
    encoder = register_module("encoder", ViTEncoder(enc));
    reconstructor = register_module("reconstructor",
                                    MaskedDecoder(enc, rec_dec, enc.patch_voxels()));
    predictor = register_module("predictor", MaskedDecoder(enc, diff_dec, 1));
}

torch::Tensor PretrainModelImpl::reconstruct_masked(const torch::Tensor& tokens,
                                                    const torch::Tensor& visible,
                                                    const torch::Tensor& masked) {
    auto full = reconstructor->forward_full(tokens, visible);  // [B, N, P^3]
    const int64_t b = full.size(0);
    auto m = masked.dim() == 1 ? masked.unsqueeze(0).expand({b, masked.size(0)}) : masked;
    auto idx = m.unsqueeze(-1).expand({b, m.size(1), full.size(2)});
    return torch::gather(full, 1, idx);
}

torch::Tensor PretrainModelImpl::predict_difficulty(const torch::Tensor& tokens,
                                                    const torch::Tensor& visible) {
    return predictor->forward_full(tokens, visible).squeeze(-1);  // [B, N]
}

// --- ModelPair ---

ModelPair::ModelPair(const EncoderConfig& enc, const DecoderConfig& rec_dec,
                     const DecoderConfig& diff_dec, double ema_momentum)
    : momentum(ema_momentum) {
    student = PretrainModel(enc, rec_dec, diff_dec);
    teacher = PretrainModel(enc, rec_dec, diff_dec);
    sync_teacher();
}

void ModelPair::sync_teacher() {
    torch::NoGradGuard ng;
    auto s = student->named_parameters();
    auto t = teacher->named_parameters();
    for (const auto& item : s) t[item.key()].copy_(item.value());
    for (auto& p : teacher->parameters()) p.set_requires_grad(false);
    teacher->eval();
}

void ModelPair::ema_update() {
    torch::NoGradGuard ng;
    auto s = student->named_parameters();
    auto t = teacher->named_parameters();
    for (const auto& item : s) {
        auto& tp = t[item.key()];
        if (tp.sizes() != item.value().sizes())
            throw std::runtime_error("ema_update: shape mismatch at " + item.key());
        tp.mul_(momentum).add_(item.value(), 1.0 - momentum);
    }
}

// --- segmentation net ---

ConvBlockImpl::ConvBlockImpl(int64_t in_ch, int64_t out_ch) {
    auto groups = out_ch % 8 == 0 ? 8 : 1;
    conv1 = register_module(
        "conv1", nn::Conv3d(nn::Conv3dOptions(in_ch, out_ch, 3).padding(1)));
    conv2 = register_module(
        "conv2", nn::Conv3d(nn::Conv3dOptions(out_ch, out_ch, 3).padding(1)));
    gn1 = register_module("gn1", nn::GroupNorm(groups, out_ch));
    gn2 = register_module("gn2", nn::GroupNorm(groups, out_ch));
}

torch::Tensor ConvBlockImpl::forward(torch::Tensor x) {
    x = torch::relu(gn1(conv1(x)));
    return torch::relu(gn2(conv2(x)));
}

namespace {

nn::ConvTranspose3d deconv(int64_t in_ch, int64_t out_ch) {
    return nn::ConvTranspose3d(nn::ConvTranspose3dOptions(in_ch, out_ch, 2).stride(2));
}

}  // namespace

SegmentationNetImpl::SegmentationNetImpl(const EncoderConfig& enc, int64_t num_classes_)
    : num_classes(num_classes_) {
    if (enc.patch_size != 16)
        throw std::invalid_argument("SegmentationNet: decoder assumes patch size 16");
    encoder = register_module("encoder", ViTEncoder(enc));

    const int64_t d = enc.depth;
    skip_blocks = {std::max<int64_t>(1, d / 4), std::max<int64_t>(1, d / 2),
                   std::max<int64_t>(1, 3 * d / 4), d};

    const int64_t e = enc.embed_dim;
    const int64_t c0 = 8, c1 = 16, c2 = 32, c3 = 64, c4 = 128;

    bottleneck = register_module("bottleneck", ConvBlock(e, c4));
    up4 = register_module("up4", deconv(c4, c3));
    proj3 = register_module("proj3", nn::Sequential(deconv(e, c3)));
    dec3 = register_module("dec3", ConvBlock(2 * c3, c3));
    up3 = register_module("up3", deconv(c3, c2));
    proj2 = register_module("proj2",
                            nn::Sequential(deconv(e, c2), nn::ReLU(), deconv(c2, c2)));
    dec2 = register_module("dec2", ConvBlock(2 * c2, c2));
    up2 = register_module("up2", deconv(c2, c1));
    proj1 = register_module(
        "proj1", nn::Sequential(deconv(e, c1), nn::ReLU(), deconv(c1, c1), nn::ReLU(),
                                deconv(c1, c1)));
    dec1 = register_module("dec1", ConvBlock(2 * c1, c1));
    up1 = register_module("up1", deconv(c1, c0));
    stem = register_module("stem", ConvBlock(1, c0));
    dec0 = register_module("dec0", ConvBlock(2 * c0, c0));
    head = register_module("head", nn::Conv3d(nn::Conv3dOptions(c0, num_classes, 1)));
}

torch::Tensor SegmentationNetImpl::tokens_to_grid(const torch::Tensor& tokens) const {
    const auto& g = encoder->cfg.grid;
    return tokens.transpose(1, 2).reshape(
        {tokens.size(0), tokens.size(2), g[0], g[1], g[2]});
}

torch::Tensor SegmentationNetImpl::forward(const torch::Tensor& volume) {
    const auto& cfg = encoder->cfg;
    const int64_t b = volume.size(0);
    const int64_t p = cfg.patch_size;
    const auto& g = cfg.grid;
    if (volume.size(1) != g[0] * p || volume.size(2) != g[1] * p ||
        volume.size(3) != g[2] * p)
        throw std::invalid_argument("SegmentationNet: volume dims mismatch encoder grid");

    auto patches = volume.view({b, g[0], p, g[1], p, g[2], p})
                       .permute({0, 1, 3, 5, 2, 4, 6})
                       .reshape({b, cfg.num_patches(), p * p * p});
    auto positions = torch::arange(cfg.num_patches(), torch::kInt64);

    auto states = encoder->forward_features(patches, positions);
    auto z1 = tokens_to_grid(states[static_cast<size_t>(skip_blocks[0] - 1)]);
    auto z2 = tokens_to_grid(states[static_cast<size_t>(skip_blocks[1] - 1)]);
    auto z3 = tokens_to_grid(states[static_cast<size_t>(skip_blocks[2] - 1)]);
    auto z4 = tokens_to_grid(encoder->norm(states[static_cast<size_t>(skip_blocks[3] - 1)]));

    auto x = up4(bottleneck(z4));                                   // 1/8
    x = up3(dec3(torch::cat({x, proj3->forward(z3)}, 1)));          // 1/4
    x = up2(dec2(torch::cat({x, proj2->forward(z2)}, 1)));          // 1/2
    x = up1(dec1(torch::cat({x, proj1->forward(z1)}, 1)));          // full
    auto s = stem(volume.unsqueeze(1));
    x = dec0(torch::cat({x, s}, 1));
    return head(x);  // [B, K, H, W, D]
}

torch::Tensor segment(SegmentationNet& net, const torch::Tensor& volume) {
    auto logits = net->forward(volume.unsqueeze(0)).squeeze(0);  // [K, H, W, D]
    return logits.permute({1, 2, 3, 0}).contiguous();            // [H, W, D, K]
}

}  // namespace hpm
