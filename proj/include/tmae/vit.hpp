#pragma once

#include <span>
#include <vector>

#include "tmae/config.hpp"
#include "tmae/layers.hpp"
#include "tmae/masking.hpp"

namespace tmae {

/// [C x H x W] -> [N x p*p*C] or [B x C x H x W] -> [B x N x p*p*C].
/// Row i is the (C, p, p) block of patch i in row-major patch order.
template <typename T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch);

/// Inverse of patchify for a batch: [B x N x p*p*C] -> [B x C x H x W].
template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t patch, std::size_t channels, std::size_t rows,
                     std::size_t cols);

/// Fixed 2-D sine-cosine table [rows*cols x dim]. The first dim/2 channels
/// encode the row index and the rest the column index, each as interleaved
/// (sin, cos) pairs over frequencies 10000^(-i/(dim/4)).
template <typename T>
Tensor<T> sincos_pos_embed(std::size_t rows, std::size_t cols, std::size_t dim);

template <typename T>
struct MultiHeadAttention {
    Linear<T> qkv;
    Linear<T> proj;
    std::size_t heads = 1;

    MultiHeadAttention() = default;
    MultiHeadAttention(std::size_t dim, std::size_t heads, Rng& rng);

    Tensor<T> operator()(const Tensor<T>& x) const;
    /// Softmax attention weights [B*heads x N x N].
    Tensor<T> attention_weights(const Tensor<T>& x) const;
    void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// Pre-norm block: x + MHA(LN(x)), then + MLP(LN(.)) with GELU.
template <typename T>
struct TransformerBlock {
    LayerNorm<T> norm1;
    MultiHeadAttention<T> attn;
    LayerNorm<T> norm2;
    Linear<T> fc1;
    Linear<T> fc2;

    TransformerBlock() = default;
    TransformerBlock(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, Rng& rng);

    Tensor<T> operator()(const Tensor<T>& x) const;
    void collect(ParamList<T>& out, const std::string& prefix) const;
    /// Zeroes both residual-branch output projections, making the block the identity.
    void zero_residual_outputs();
};

/// ViT encoder without class token; exposes intermediate block outputs.
template <typename T>
class VitEncoder {
   public:
    struct Output {
        Tensor<T> final;            // output of the last block [B x N' x D]
        std::vector<Tensor<T>> taps;  // outputs after each configured tap block
        std::size_t rows = 0, cols = 0;
    };

    VitEncoder() = default;
    VitEncoder(const ModelConfig& config, Rng& rng);

    const ModelConfig& config() const { return config_; }

    /// patchify -> linear embed -> + positional table, [B x N x D].
    Tensor<T> embed(const Tensor<T>& images) const;

    /// Runs every block over already-embedded tokens.
    Output run_blocks(const Tensor<T>& tokens, bool capture_taps = true) const;

    /// Full pass; with plans, only each image's kept tokens enter the blocks.
    Output encode(const Tensor<T>& images, std::span<const MaskPlan> plans = {}, bool capture_taps = true) const;

    ParamList<T> params(const std::string& prefix = "encoder") const;

    Linear<T>& patch_embed() { return patch_embed_; }
    std::vector<TransformerBlock<T>>& blocks() { return blocks_; }
    const Tensor<T>& pos_table() const { return pos_; }

   private:
    ModelConfig config_;
    Linear<T> patch_embed_;
    Tensor<T> pos_;  // [N x D], not learned
    std::vector<TransformerBlock<T>> blocks_;
};

}  // namespace tmae
