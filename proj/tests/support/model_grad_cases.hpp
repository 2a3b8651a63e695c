#pragma once

// Finite-difference cases for the composite model blocks, in double.

#include <limits>

#include "gradient_suite.hpp"
#include "tmae/mae.hpp"
#include "tmae/masking.hpp"
#include "tmae/seg.hpp"
#include "tmae/vit.hpp"

namespace tmae::testing {

inline ModelConfig small_grad_config() {
    ModelConfig c;
    c.image_size = 16;
    c.patch_size = 4;
    c.embed_dim = 8;
    c.encoder_blocks = 4;
    c.encoder_heads = 2;
    c.decoder_dim = 8;
    c.decoder_blocks = 1;
    c.decoder_heads = 2;
    c.mlp_ratio = 2;
    c.head_width = 4;
    c.unet_base = 2;
    c.n_classes = 3;
    return c;
}

inline std::vector<D> with_params(std::vector<D> inputs, const ParamList<double>& params) {
    for (const auto& p : params) inputs.push_back(p.tensor);
    return inputs;
}

/// Freshly built layers have zero biases, which parks ReLU inputs fed by
/// dead channels exactly on the kink; random instances move them off it.
inline void randomize_biases(const ParamList<double>& params, Rng& rng) {
    for (const auto& p : params) {
        const auto& n = p.name;
        if (n.size() < 5 || n.compare(n.size() - 5, 5, ".bias") != 0) continue;
        auto t = p.tensor;
        for (auto& v : t.mutable_data()) v = 0.1 * rng.normal();
    }
}

inline bool is_qkv_bias(const std::string& name) {
    const std::string suffix = "attn.qkv.bias";
    return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Softmax is shift invariant, so the key part of every qkv bias has an
/// exactly zero gradient that finite differences can only resolve as noise.
/// Those coordinates are left out of the relative check; instead their
/// analytic gradient must vanish.
inline GradCheck check_with_attention(std::vector<D> leading, const ParamList<double>& params,
                                      const std::function<D()>& loss_fn, Rng& rng, std::size_t max_coords,
                                      double h = 1e-6) {
    randomize_biases(params, rng);
    const std::size_t offset = leading.size();
    auto inputs = with_params(std::move(leading), params);
    auto skip = [&](std::size_t t, std::size_t i) {
        if (t < offset || !is_qkv_bias(params[t - offset].name)) return false;
        const std::size_t dim = params[t - offset].tensor.numel() / 3;
        return i >= dim && i < 2 * dim;
    };
    auto result = gradcheck(inputs, loss_fn, rng, max_coords, h, skip);
    for (auto& in : inputs) in.zero_grad();
    loss_fn().backward();
    for (const auto& p : params) {
        if (!is_qkv_bias(p.name) || !p.tensor.has_grad()) continue;
        const std::size_t dim = p.tensor.numel() / 3;
        for (std::size_t i = dim; i < 2 * dim; ++i)
            if (std::abs(p.tensor.grad()[i]) > 1e-10) {
                result.max_rel_error = std::numeric_limits<double>::infinity();
                result.worst = p.name + " key bias gradient " + std::to_string(p.tensor.grad()[i]);
            }
    }
    return result;
}

inline std::vector<GradCase> model_grad_cases() {
    std::vector<GradCase> cases;
    cases.push_back({"transformer_block", [](Rng& rng) {
                         TransformerBlock<double> block(8, 2, 2, rng);
                         ParamList<double> params;
                         block.collect(params, "block");
                         auto x = rnd({2, 5, 8}, rng);
                         auto p = projection_like(block(x), rng);
                         return check_with_attention({x}, params, [&] { return project(block(x), p); }, rng, 12);
                     }});
    cases.push_back({"vit_encoder", [](Rng& rng) {
                         auto cfg = small_grad_config();
                         cfg.encoder_blocks = 2;
                         cfg.tap_blocks = {0, 1};
                         VitEncoder<double> enc(cfg, rng);
                         auto images = rnd({2, 1, 16, 16}, rng);
                         auto plans = batch_masks(2, cfg.n_tokens(), 0.5, rng.below(1000), 0);
                         auto p = projection_like(enc.encode(images, plans).final, rng);
                         return check_with_attention({images}, enc.params(),
                                                     [&] { return project(enc.encode(images, plans).final, p); },
                                                     rng, 12);
                     }});
    cases.push_back({"upernet_head", [](Rng& rng) {
                         auto cfg = small_grad_config();
                         UperNetHead<double> head(cfg, rng);
                         std::vector<D> taps;
                         for (int i = 0; i < 4; ++i) taps.push_back(rnd({2, 16, 8}, rng));
                         randomize_biases(head.params(), rng);
                         auto run = [&] { return head(taps, 4, 4, 16, 16); };
                         auto p = projection_like(run(), rng);
                         return gradcheck(with_params(taps, head.params()), [&] { return project(run(), p); }, rng, 12);
                     }});
    cases.push_back({"unet", [](Rng& rng) {
                         auto cfg = small_grad_config();
                         UNet<double> net(1, cfg.n_classes, cfg.unet_base, rng);
                         randomize_biases(net.params(), rng);
                         auto x = rnd({1, 1, 16, 16}, rng);
                         auto p = projection_like(net(x), rng);
                         return gradcheck(with_params({x}, net.params()), [&] { return project(net(x), p); }, rng, 12);
                     }});
    cases.push_back({"mae_decoder", [](Rng& rng) {
                         auto cfg = small_grad_config();
                         MaeModel<double> mae(cfg, rng);
                         auto plans = batch_masks(2, cfg.n_tokens(), 0.75, rng.below(1000), 0);
                         auto latent = rnd({2, plans[0].keep_ids.size(), cfg.embed_dim}, rng);
                         auto p = projection_like(mae.decode(latent, plans), rng);
                         return check_with_attention({latent}, mae.decoder_params(),
                                                     [&] { return project(mae.decode(latent, plans), p); }, rng, 12);
                     }});
    cases.push_back({"mae_reconstruction_loss", [](Rng& rng) {
                         auto cfg = small_grad_config();
                         cfg.encoder_blocks = 2;
                         cfg.tap_blocks = {0, 1};
                         MaeModel<double> mae(cfg, rng);
                         auto images = rnd({2, 1, 16, 16}, rng);
                         auto plans = batch_masks(2, cfg.n_tokens(), 0.75, rng.below(1000), 0);
                         return check_with_attention({}, mae.params(), [&] { return mae.forward(images, plans, true).loss; },
                                                     rng, 6, 1e-5);
                     }});
    return cases;
}

}  // namespace tmae::testing
