#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <vector>

#include "hpm/masking.hpp"

namespace hpm {

namespace nn = torch::nn;

struct EncoderConfig {
    int64_t embed_dim = 192;
    int64_t depth = 6;
    int64_t num_heads = 3;
    double mlp_ratio = 4.0;
    int64_t patch_size = 16;
    std::array<int64_t, 3> grid{4, 4, 4};  // patch grid (H/P, W/P, D/P)
    double droppath = 0.0;                 // stochastic depth, fine-tuning only

    int64_t num_patches() const { return grid[0] * grid[1] * grid[2]; }
    int64_t patch_voxels() const { return patch_size * patch_size * patch_size; }
};

struct DecoderConfig {
    int64_t dim = 96;
    int64_t depth = 2;
    int64_t num_heads = 3;
    double mlp_ratio = 4.0;
};

// Fixed 3D sine-cosine positional table, [N, dim]; dim must be divisible by 6.
torch::Tensor sincos_pos_embed_3d(const std::array<int64_t, 3>& grid, int64_t dim);

// --- transformer building blocks ---

struct AttentionImpl : nn::Module {
    AttentionImpl(int64_t dim, int64_t num_heads);
    torch::Tensor forward(torch::Tensor x);

    int64_t heads;
    double scale;
    nn::Linear qkv{nullptr}, proj{nullptr};
};
TORCH_MODULE(Attention);

struct BlockImpl : nn::Module {
    BlockImpl(int64_t dim, int64_t num_heads, double mlp_ratio, double droppath = 0.0);
    torch::Tensor forward(torch::Tensor x);

    nn::LayerNorm norm1{nullptr}, norm2{nullptr};
    Attention attn{nullptr};
    nn::Linear fc1{nullptr}, fc2{nullptr};
    double droppath_prob;

  private:
    torch::Tensor drop_path(torch::Tensor x);
};
TORCH_MODULE(Block);

// --- ViT encoder over patch vectors ---

struct ViTEncoderImpl : nn::Module {
    explicit ViTEncoderImpl(const EncoderConfig& cfg);

    // patches [B, T, P^3]; positions [T] or [B, T] patch indices into the grid.
    // Returns normed tokens [B, T, dim].
    torch::Tensor forward(const torch::Tensor& patches, const torch::Tensor& positions);

    // Per-block hidden states (unnormed), for segmentation skips.
    std::vector<torch::Tensor> forward_features(const torch::Tensor& patches,
                                                const torch::Tensor& positions);

    torch::Tensor gather_pos(const torch::Tensor& positions, int64_t batch) const;

    EncoderConfig cfg;
    nn::Linear patch_embed{nullptr};
    nn::LayerNorm norm{nullptr};
    nn::ModuleList blocks;
    torch::Tensor pos_embed;  // buffer [N, dim]
};
TORCH_MODULE(ViTEncoder);

// --- decoder over the full token grid with mask tokens ---
// Shared shape for the image reconstructor d_phi (out_dim = P^3) and the
// difficulty predictor d_psi (out_dim = 1): embed encoder tokens, fill the
// masked slots with a learned token, add positions, run blocks, apply head.

struct MaskedDecoderImpl : nn::Module {
    MaskedDecoderImpl(const EncoderConfig& enc, const DecoderConfig& dec, int64_t out_dim);

    // tokens [B, T, enc_dim]; visible [T] or [B, T] indices the tokens occupy.
    // Returns head output over the full grid, [B, N, out_dim].
    torch::Tensor forward_full(const torch::Tensor& tokens, const torch::Tensor& visible);

    nn::Linear embed{nullptr}, head{nullptr};
    nn::LayerNorm norm{nullptr};
    nn::ModuleList blocks;
    torch::Tensor mask_token;  // parameter [1, 1, dim]
    torch::Tensor pos_embed;   // buffer [N, dim]
    int64_t num_patches;
};
TORCH_MODULE(MaskedDecoder);

// Student or teacher triple (f_theta, d_phi, d_psi).
struct PretrainModelImpl : nn::Module {
    PretrainModelImpl(const EncoderConfig& enc, const DecoderConfig& rec_dec,
                      const DecoderConfig& diff_dec);

    // Masked patch predictions [B, M, P^3] for the given per-sample masks.
    torch::Tensor reconstruct_masked(const torch::Tensor& tokens,
                                     const torch::Tensor& visible,
                                     const torch::Tensor& masked);

    // Predicted per-patch difficulty over the full grid, [B, N].
    torch::Tensor predict_difficulty(const torch::Tensor& tokens,
                                     const torch::Tensor& visible);

    ViTEncoder encoder{nullptr};
    MaskedDecoder reconstructor{nullptr};
    MaskedDecoder predictor{nullptr};
};
TORCH_MODULE(PretrainModel);

// Student/teacher pair; the teacher tracks the student as an exponential
// moving average and never receives gradients.
struct ModelPair {
    ModelPair(const EncoderConfig& enc, const DecoderConfig& rec_dec,
              const DecoderConfig& diff_dec, double ema_momentum);

    // theta_t <- m * theta_t + (1 - m) * theta_s
    void ema_update();
    // hard copy student -> teacher
    void sync_teacher();

    PretrainModel student{nullptr};
    PretrainModel teacher{nullptr};
    double momentum;
};

// --- UNETR-style segmentation net ---

struct ConvBlockImpl : nn::Module {
    ConvBlockImpl(int64_t in_ch, int64_t out_ch);
    torch::Tensor forward(torch::Tensor x);
    nn::Conv3d conv1{nullptr}, conv2{nullptr};
    nn::GroupNorm gn1{nullptr}, gn2{nullptr};
};
TORCH_MODULE(ConvBlock);

struct SegmentationNetImpl : nn::Module {
    SegmentationNetImpl(const EncoderConfig& enc, int64_t num_classes);

    // volume [B, H, W, D] (preprocessed) -> logits [B, K, H, W, D]
    torch::Tensor forward(const torch::Tensor& volume);

    ViTEncoder encoder{nullptr};
    std::vector<int64_t> skip_blocks;  // 1-based encoder block indices
    // token-grid feature projections at increasing resolution
    nn::Sequential proj3{nullptr}, proj2{nullptr}, proj1{nullptr};
    ConvBlock bottleneck{nullptr}, dec3{nullptr}, dec2{nullptr}, dec1{nullptr},
        dec0{nullptr}, stem{nullptr};
    nn::ConvTranspose3d up4{nullptr}, up3{nullptr}, up2{nullptr}, up1{nullptr};
    nn::Conv3d head{nullptr};
    int64_t num_classes;

  private:
    torch::Tensor tokens_to_grid(const torch::Tensor& tokens) const;
};
TORCH_MODULE(SegmentationNet);

// Spec-facing wrapper: logits in [H, W, D, K] layout for a single volume.
torch::Tensor segment(SegmentationNet& net, const torch::Tensor& volume);

}  // namespace hpm
