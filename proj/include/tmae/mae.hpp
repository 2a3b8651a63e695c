#pragma once

#include <span>
#include <vector>

#include "tmae/optim.hpp"
#include "tmae/vit.hpp"

namespace tmae {

/// Mean squared error over masked patches only.
///
/// pred and target are [B x N x L]. With norm_pix, each target patch is
/// standardized by its own mean and variance first.
template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& pred, const Tensor<T>& target, std::span<const MaskPlan> plans,
                              bool norm_pix = false);

/// Encoder plus the lightweight reconstruction decoder.
template <typename T>
class MaeModel {
   public:
    MaeModel() = default;
    MaeModel(const ModelConfig& config, Rng& rng);

    const ModelConfig& config() const { return encoder_.config(); }
    VitEncoder<T>& encoder() { return encoder_; }
    const VitEncoder<T>& encoder() const { return encoder_; }

    /// latent [B x kept x D] (after the encoder norm) -> predicted patches [B x N x L].
    Tensor<T> decode(const Tensor<T>& latent, std::span<const MaskPlan> plans) const;

    struct Forward {
        Tensor<T> loss;
        Tensor<T> pred;    // [B x N x L]
        Tensor<T> target;  // [B x N x L]
    };
    Forward forward(const Tensor<T>& images, std::span<const MaskPlan> plans, bool norm_pix = false) const;

    /// Encoder parameters under "encoder.", the rest under "decoder.".
    ParamList<T> params() const;
    ParamList<T> decoder_params() const;

    Tensor<T>& mask_token() { return mask_token_; }
    std::vector<TransformerBlock<T>>& decoder_blocks() { return dec_blocks_; }
    LayerNorm<T>& decoder_norm() { return dec_norm_; }
    Linear<T>& decoder_embed() { return dec_embed_; }
    Linear<T>& decoder_pred() { return dec_pred_; }
    LayerNorm<T>& encoder_norm() { return enc_norm_; }
    const Tensor<T>& decoder_pos_table() const { return dec_pos_; }

   private:
    VitEncoder<T> encoder_;
    LayerNorm<T> enc_norm_;
    Linear<T> dec_embed_;
    Tensor<T> mask_token_;  // [decoder_dim]
    Tensor<T> dec_pos_;     // [N x decoder_dim], fixed
    std::vector<TransformerBlock<T>> dec_blocks_;
    LayerNorm<T> dec_norm_;
    Linear<T> dec_pred_;
};

/// One optimizer step with a fresh mask per image drawn from (seed, step, image).
/// Returns the loss before the update.
template <typename T>
double pretrain_step(MaeModel<T>& model, const Tensor<T>& images, AdamW<T>& optimizer, double lr,
                     std::uint64_t seed, std::uint64_t step, bool norm_pix = false);

}  // namespace tmae
