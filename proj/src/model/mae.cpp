#include "tmae/mae.hpp"

#include <cmath>

#include "tmae/error.hpp"
#include "tmae/ops.hpp"

namespace tmae {

namespace {

template <typename T>
Tensor<T> normalize_patches(const Tensor<T>& target) {
    NoGradGuard no_grad;
    const std::size_t l = target.shape().back();
    std::vector<T> out(target.data().begin(), target.data().end());
    for (std::size_t r = 0; r < out.size() / l; ++r) {
        T* row = out.data() + r * l;
        double mean = 0, var = 0;
        for (std::size_t i = 0; i < l; ++i) mean += row[i];
        mean /= static_cast<double>(l);
        for (std::size_t i = 0; i < l; ++i) var += (row[i] - mean) * (row[i] - mean);
        var /= static_cast<double>(l);
        const double inv = 1.0 / std::sqrt(var + 1e-6);
        for (std::size_t i = 0; i < l; ++i) row[i] = static_cast<T>((row[i] - mean) * inv);
    }
    return Tensor<T>::from(target.shape(), std::move(out));
}

}  // namespace

template <typename T>
Tensor<T> reconstruction_loss(const Tensor<T>& pred, const Tensor<T>& target, std::span<const MaskPlan> plans,
                              bool norm_pix) {
    if (pred.shape() != target.shape() || pred.dim() != 3)
        throw DimensionError("reconstruction loss: " + shape_str(pred.shape()) + " vs " + shape_str(target.shape()));
    const std::size_t b = pred.size(0), n = pred.size(1);
    if (plans.size() != b) throw ContractError("reconstruction loss needs one mask plan per image");
    const std::size_t masked = plans[0].mask_ids.size();
    if (masked == 0) throw ContractError("reconstruction loss over an empty mask set");
    std::vector<std::size_t> ids;
    ids.reserve(b * masked);
    for (const auto& p : plans) {
        if (p.n_tokens != n || p.mask_ids.size() != masked)
            throw ContractError("mask plans disagree with " + std::to_string(n) + " tokens");
        ids.insert(ids.end(), p.mask_ids.begin(), p.mask_ids.end());
    }
    const Tensor<T> tgt = norm_pix ? normalize_patches(target) : target;
    return mse(gather_rows(pred, ids, masked), gather_rows(tgt, ids, masked));
}

template <typename T>
MaeModel<T>::MaeModel(const ModelConfig& config, Rng& rng) : encoder_(config, rng), enc_norm_(config.embed_dim) {
    dec_embed_ = Linear<T>(config.embed_dim, config.decoder_dim, rng);
    mask_token_ = Tensor<T>::randn({config.decoder_dim}, rng, 0.02, true);
    dec_pos_ = sincos_pos_embed<T>(config.grid(), config.grid(), config.decoder_dim);
    for (std::size_t i = 0; i < config.decoder_blocks; ++i)
        dec_blocks_.emplace_back(config.decoder_dim, config.decoder_heads, config.mlp_ratio, rng);
    dec_norm_ = LayerNorm<T>(config.decoder_dim);
    dec_pred_ = Linear<T>(config.decoder_dim, config.patch_dim(), rng);
}

template <typename T>
Tensor<T> MaeModel<T>::decode(const Tensor<T>& latent, std::span<const MaskPlan> plans) const {
    const auto& cfg = config();
    const std::size_t n = cfg.n_tokens();
    if (latent.dim() != 3 || plans.size() != latent.size(0))
        throw ContractError("decode: " + std::to_string(plans.size()) + " plans for latent " +
                            shape_str(latent.shape()));
    const std::size_t b = latent.size(0), kept = latent.size(1);
    std::vector<std::size_t> order;
    order.reserve(b * n);
    for (const auto& p : plans) {
        if (p.n_tokens != n || p.keep_ids.size() != kept)
            throw ContractError("decode: plan keeps " + std::to_string(p.keep_ids.size()) + " of " +
                                std::to_string(p.n_tokens) + " tokens, latent has " + std::to_string(kept) +
                                " of " + std::to_string(n));
        order.insert(order.end(), p.restore_perm.begin(), p.restore_perm.end());
    }
    auto x = dec_embed_(latent);
    if (kept < n) {
        auto fill = add(Tensor<T>::zeros({b, n - kept, cfg.decoder_dim}), mask_token_);
        x = concat<T>({x, fill}, 1);
    }
    x = add(gather_rows(x, order, n), dec_pos_);
    for (const auto& blk : dec_blocks_) x = blk(x);
    return dec_pred_(dec_norm_(x));
}

template <typename T>
typename MaeModel<T>::Forward MaeModel<T>::forward(const Tensor<T>& images, std::span<const MaskPlan> plans,
                                                   bool norm_pix) const {
    auto enc = encoder_.encode(images, plans, false);
    Forward out;
    out.pred = decode(enc_norm_(enc.final), plans);
    out.target = patchify(images, config().patch_size);
    out.loss = reconstruction_loss(out.pred, out.target, plans, norm_pix);
    return out;
}

template <typename T>
ParamList<T> MaeModel<T>::decoder_params() const {
    ParamList<T> out;
    enc_norm_.collect(out, "decoder.encoder_norm");
    dec_embed_.collect(out, "decoder.embed");
    out.push_back({"decoder.mask_token", mask_token_, false});
    for (std::size_t i = 0; i < dec_blocks_.size(); ++i)
        dec_blocks_[i].collect(out, "decoder.blocks." + std::to_string(i));
    dec_norm_.collect(out, "decoder.norm");
    dec_pred_.collect(out, "decoder.pred");
    return out;
}

template <typename T>
ParamList<T> MaeModel<T>::params() const {
    auto out = encoder_.params();
    append(out, decoder_params());
    return out;
}

template <typename T>
double pretrain_step(MaeModel<T>& model, const Tensor<T>& images, AdamW<T>& optimizer, double lr,
                     std::uint64_t seed, std::uint64_t step, bool norm_pix) {
    const auto& cfg = model.config();
    auto plans = batch_masks(images.size(0), cfg.n_tokens(), cfg.mask_ratio, seed, step);
    optimizer.zero_grad();
    auto fwd = model.forward(images, plans, norm_pix);
    const double loss = fwd.loss.item();
    if (!std::isfinite(loss)) throw TrainingError("non-finite reconstruction loss at step " + std::to_string(step));
    fwd.loss.backward();
    optimizer.step(lr);
    return loss;
}

#define TMAE_INSTANTIATE(T)                                                                                  \
    template Tensor<T> reconstruction_loss(const Tensor<T>&, const Tensor<T>&, std::span<const MaskPlan>, bool); \
    template class MaeModel<T>;                                                                              \
    template double pretrain_step(MaeModel<T>&, const Tensor<T>&, AdamW<T>&, double, std::uint64_t,          \
                                  std::uint64_t, bool);

TMAE_INSTANTIATE(float)
TMAE_INSTANTIATE(double)

}  // namespace tmae
