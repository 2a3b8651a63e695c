#include "tmae/vit.hpp"

#include <array>
#include <cmath>

#include "tmae/error.hpp"
#include "tmae/ops.hpp"

namespace tmae {

template <typename T>
Tensor<T> patchify(const Tensor<T>& images, std::size_t patch) {
    const bool single = images.dim() == 3;
    if (!(single || images.dim() == 4))
        throw DimensionError("patchify expects [C x H x W] or [B x C x H x W], got " + shape_str(images.shape()));
    const Tensor<T> x = single ? reshape(images, {1, images.size(0), images.size(1), images.size(2)}) : images;
    const std::size_t b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    if (patch == 0 || h % patch != 0 || w % patch != 0)
        throw DimensionError("image " + shape_str(images.shape()) + " not divisible into " + std::to_string(patch) +
                             "x" + std::to_string(patch) + " patches");
    const std::size_t r = h / patch, q = w / patch;
    auto blocks = permute(reshape(x, {b, c, r, patch, q, patch}), {0, 2, 4, 1, 3, 5});
    if (single) return reshape(blocks, {r * q, c * patch * patch});
    return reshape(blocks, {b, r * q, c * patch * patch});
}

template <typename T>
Tensor<T> unpatchify(const Tensor<T>& patches, std::size_t patch, std::size_t channels, std::size_t rows,
                     std::size_t cols) {
    if (patches.dim() != 3 || patches.size(1) != rows * cols || patches.size(2) != channels * patch * patch)
        throw DimensionError("unpatchify: " + shape_str(patches.shape()) + " does not match grid " +
                             std::to_string(rows) + "x" + std::to_string(cols));
    const std::size_t b = patches.size(0);
    auto blocks = permute(reshape(patches, {b, rows, cols, channels, patch, patch}), {0, 3, 1, 4, 2, 5});
    return reshape(blocks, {b, channels, rows * patch, cols * patch});
}

template <typename T>
Tensor<T> sincos_pos_embed(std::size_t rows, std::size_t cols, std::size_t dim) {
    if (dim == 0 || dim % 4 != 0)
        throw ConfigError("positional embedding width " + std::to_string(dim) + " not divisible by 4");
    const std::size_t quarter = dim / 4;
    std::vector<T> table(rows * cols * dim);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) {
            T* row = table.data() + (r * cols + c) * dim;
            for (std::size_t i = 0; i < quarter; ++i) {
                const double omega = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(quarter));
                row[2 * i] = static_cast<T>(std::sin(static_cast<double>(r) * omega));
                row[2 * i + 1] = static_cast<T>(std::cos(static_cast<double>(r) * omega));
                row[dim / 2 + 2 * i] = static_cast<T>(std::sin(static_cast<double>(c) * omega));
                row[dim / 2 + 2 * i + 1] = static_cast<T>(std::cos(static_cast<double>(c) * omega));
            }
        }
    return Tensor<T>::from({rows * cols, dim}, std::move(table));
}

template <typename T>
MultiHeadAttention<T>::MultiHeadAttention(std::size_t dim, std::size_t heads_, Rng& rng)
    : qkv(dim, 3 * dim, rng), proj(dim, dim, rng), heads(heads_) {
    if (heads == 0 || dim % heads != 0)
        throw ConfigError("attention width " + std::to_string(dim) + " not divisible by " +
                          std::to_string(heads) + " heads");
}

namespace {

/// Splits fused q/k/v projections into per-head tensors [B*H x N x dh].
template <typename T>
std::array<Tensor<T>, 3> split_heads(const Tensor<T>& qkv, std::size_t b, std::size_t n, std::size_t heads,
                                     std::size_t dh) {
    auto packed = permute(reshape(qkv, {b, n, 3, heads, dh}), {2, 0, 3, 1, 4});
    std::array<Tensor<T>, 3> out;
    for (std::size_t i = 0; i < 3; ++i) out[i] = reshape(slice(packed, 0, i, 1), {b * heads, n, dh});
    return out;
}

}  // namespace

template <typename T>
Tensor<T> MultiHeadAttention<T>::attention_weights(const Tensor<T>& x) const {
    const std::size_t b = x.size(0), n = x.size(1), d = x.size(2);
    if (d % heads != 0) throw ConfigError("attention width not divisible by heads");
    const std::size_t dh = d / heads;
    auto [q, k, v] = split_heads(qkv(x), b, n, heads, dh);
    auto scores = scale(matmul(q, transpose(k, 1, 2)), 1.0 / std::sqrt(static_cast<double>(dh)));
    return softmax(scores, 2);
}

template <typename T>
Tensor<T> MultiHeadAttention<T>::operator()(const Tensor<T>& x) const {
    if (x.dim() != 3) throw DimensionError("attention expects [B x N x D], got " + shape_str(x.shape()));
    const std::size_t b = x.size(0), n = x.size(1), d = x.size(2);
    if (d % heads != 0) throw ConfigError("attention width not divisible by heads");
    const std::size_t dh = d / heads;
    auto [q, k, v] = split_heads(qkv(x), b, n, heads, dh);
    auto scores = scale(matmul(q, transpose(k, 1, 2)), 1.0 / std::sqrt(static_cast<double>(dh)));
    auto mixed = matmul(softmax(scores, 2), v);  // [B*H x N x dh]
    auto merged = reshape(permute(reshape(mixed, {b, heads, n, dh}), {0, 2, 1, 3}), {b, n, d});
    return proj(merged);
}

template <typename T>
void MultiHeadAttention<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    qkv.collect(out, prefix + ".qkv");
    proj.collect(out, prefix + ".proj");
}

template <typename T>
TransformerBlock<T>::TransformerBlock(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, Rng& rng)
    : norm1(dim), attn(dim, heads, rng), norm2(dim), fc1(dim, dim * mlp_ratio, rng), fc2(dim * mlp_ratio, dim, rng) {}

template <typename T>
Tensor<T> TransformerBlock<T>::operator()(const Tensor<T>& x) const {
    auto h = add(x, attn(norm1(x)));
    return add(h, fc2(gelu(fc1(norm2(h)))));
}

template <typename T>
void TransformerBlock<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    norm1.collect(out, prefix + ".norm1");
    attn.collect(out, prefix + ".attn");
    norm2.collect(out, prefix + ".norm2");
    fc1.collect(out, prefix + ".mlp.fc1");
    fc2.collect(out, prefix + ".mlp.fc2");
}

template <typename T>
void TransformerBlock<T>::zero_residual_outputs() {
    zero_tensors<T>({attn.proj.weight, attn.proj.bias, fc2.weight, fc2.bias});
}

template <typename T>
VitEncoder<T>::VitEncoder(const ModelConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    patch_embed_ = Linear<T>(config_.patch_dim(), config_.embed_dim, rng);
    pos_ = sincos_pos_embed<T>(config_.grid(), config_.grid(), config_.embed_dim);
    for (std::size_t i = 0; i < config_.encoder_blocks; ++i)
        blocks_.emplace_back(config_.embed_dim, config_.encoder_heads, config_.mlp_ratio, rng);
}

template <typename T>
Tensor<T> VitEncoder<T>::embed(const Tensor<T>& images) const {
    if (images.dim() != 4 || images.size(1) != config_.in_channels || images.size(2) != config_.image_size ||
        images.size(3) != config_.image_size)
        throw DimensionError("encoder expects [B x " + std::to_string(config_.in_channels) + " x " +
                             std::to_string(config_.image_size) + " x " + std::to_string(config_.image_size) +
                             "], got " + shape_str(images.shape()));
    return add(patch_embed_(patchify(images, config_.patch_size)), pos_);
}

template <typename T>
typename VitEncoder<T>::Output VitEncoder<T>::run_blocks(const Tensor<T>& tokens, bool capture_taps) const {
    Output out;
    out.rows = out.cols = config_.grid();
    Tensor<T> x = tokens;
    std::size_t next_tap = 0;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        x = blocks_[i](x);
        if (capture_taps && next_tap < config_.tap_blocks.size() && config_.tap_blocks[next_tap] == i) {
            out.taps.push_back(x);
            ++next_tap;
        }
    }
    out.final = x;
    return out;
}

template <typename T>
typename VitEncoder<T>::Output VitEncoder<T>::encode(const Tensor<T>& images, std::span<const MaskPlan> plans,
                                                     bool capture_taps) const {
    auto tokens = embed(images);
    if (!plans.empty()) {
        const std::size_t b = images.size(0);
        if (plans.size() != b)
            throw ContractError("masking plan count " + std::to_string(plans.size()) + " != batch " +
                                std::to_string(b));
        const std::size_t keep = plans[0].keep_ids.size();
        std::vector<std::size_t> ids;
        ids.reserve(b * keep);
        for (const auto& p : plans) {
            if (p.n_tokens != config_.n_tokens() || p.keep_ids.size() != keep)
                throw ContractError("masking plan does not match " + std::to_string(config_.n_tokens()) +
                                    " tokens with a shared keep count");
            ids.insert(ids.end(), p.keep_ids.begin(), p.keep_ids.end());
        }
        tokens = gather_rows(tokens, ids, keep);
    }
    return run_blocks(tokens, capture_taps);
}

template <typename T>
ParamList<T> VitEncoder<T>::params(const std::string& prefix) const {
    ParamList<T> out;
    patch_embed_.collect(out, prefix + ".patch_embed");
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, prefix + ".blocks." + std::to_string(i));
    return out;
}

#define TMAE_INSTANTIATE(T)                                                                              \
    template Tensor<T> patchify(const Tensor<T>&, std::size_t);                                          \
    template Tensor<T> unpatchify(const Tensor<T>&, std::size_t, std::size_t, std::size_t, std::size_t); \
    template Tensor<T> sincos_pos_embed<T>(std::size_t, std::size_t, std::size_t);                       \
    template struct MultiHeadAttention<T>;                                                               \
    template struct TransformerBlock<T>;                                                                 \
    template class VitEncoder<T>;

TMAE_INSTANTIATE(float)
TMAE_INSTANTIATE(double)

}  // namespace tmae
