#include "tmae/seg.hpp"

#include "tmae/error.hpp"
#include "tmae/ops.hpp"

namespace tmae {

template <typename T>
Tensor<T> tokens_to_map(const Tensor<T>& tokens, std::size_t rows, std::size_t cols) {
    if (tokens.dim() != 3 || tokens.size(1) != rows * cols)
        throw DimensionError("tokens " + shape_str(tokens.shape()) + " do not fill a " + std::to_string(rows) + "x" +
                             std::to_string(cols) + " grid");
    const std::size_t b = tokens.size(0), d = tokens.size(2);
    return reshape(permute(tokens, {0, 2, 1}), {b, d, rows, cols});
}

template <typename T>
UperNetHead<T>::UperNetHead(const ModelConfig& config, Rng& rng) : width_(config.head_width) {
    if (config.tap_blocks.size() != 4)
        throw ConfigError("the UperNet head needs exactly 4 tap blocks, got " +
                          std::to_string(config.tap_blocks.size()));
    const std::size_t d = config.embed_dim, w = config.head_width;
    up4_a = ConvTranspose2d<T>(d, d, 2, 2, rng);
    up4_b = ConvTranspose2d<T>(d, d, 2, 2, rng);
    up2 = ConvTranspose2d<T>(d, d, 2, 2, rng);
    for (auto& b : ppm_branch) b = Conv2d<T>(d, w, 1, 1, 0, rng);
    ppm_bottleneck = Conv2d<T>(d + 4 * w, w, 3, 1, 1, rng);
    for (auto& l : lateral) l = Conv2d<T>(d, w, 1, 1, 0, rng);
    for (auto& f : fpn_out) f = Conv2d<T>(w, w, 3, 1, 1, rng);
    fusion = Conv2d<T>(4 * w, w, 3, 1, 1, rng);
    classifier = Conv2d<T>(w, config.n_classes, 1, 1, 0, rng);
}

template <typename T>
FeaturePyramid<T> UperNetHead<T>::pyramid(const std::vector<Tensor<T>>& taps, std::size_t rows,
                                          std::size_t cols) const {
    if (taps.size() != 4) throw DimensionError("pyramid needs 4 taps, got " + std::to_string(taps.size()));
    FeaturePyramid<T> p;
    p.levels[0] = up4_b(gelu(up4_a(tokens_to_map(taps[0], rows, cols))));
    p.levels[1] = up2(tokens_to_map(taps[1], rows, cols));
    p.levels[2] = tokens_to_map(taps[2], rows, cols);
    if (rows < 2 || cols < 2) throw DimensionError("token grid too small for the stride-32 level");
    p.levels[3] = max_pool2d(tokens_to_map(taps[3], rows, cols), 2, 2);
    return p;
}

template <typename T>
Tensor<T> UperNetHead<T>::ppm(const Tensor<T>& top) const {
    if (top.dim() != 4) throw DimensionError("ppm expects [B x C x H x W], got " + shape_str(top.shape()));
    const std::size_t h = top.size(2), w = top.size(3);
    std::vector<Tensor<T>> parts{top};
    for (std::size_t i = 0; i < 4; ++i) {
        auto pooled = adaptive_avg_pool2d(top, pool_scales[i], pool_scales[i]);
        parts.push_back(bilinear_resize(relu(ppm_branch[i](pooled)), h, w));
    }
    return relu(ppm_bottleneck(concat(parts, 1)));
}

template <typename T>
Tensor<T> UperNetHead<T>::fpn_fuse(const FeaturePyramid<T>& p) const {
    std::array<Tensor<T>, 4> lat;
    for (std::size_t i = 0; i < 3; ++i) lat[i] = relu(lateral[i](p.levels[i]));
    lat[3] = p.levels[3];
    for (std::size_t i = 3; i-- > 0;)
        lat[i] = add(lat[i], bilinear_resize(lat[i + 1], lat[i].size(2), lat[i].size(3)));
    const std::size_t h = lat[0].size(2), w = lat[0].size(3);
    std::vector<Tensor<T>> outs;
    for (std::size_t i = 0; i < 3; ++i) outs.push_back(bilinear_resize(relu(fpn_out[i](lat[i])), h, w));
    outs.push_back(bilinear_resize(lat[3], h, w));
    return relu(fusion(concat(outs, 1)));
}

template <typename T>
Tensor<T> UperNetHead<T>::classify(const Tensor<T>& fused, std::size_t out_h, std::size_t out_w) const {
    return bilinear_resize(classifier(fused), out_h, out_w);
}

template <typename T>
Tensor<T> UperNetHead<T>::operator()(const std::vector<Tensor<T>>& taps, std::size_t rows, std::size_t cols,
                                     std::size_t out_h, std::size_t out_w) const {
    auto p = pyramid(taps, rows, cols);
    p.levels[3] = ppm(p.levels[3]);
    return classify(fpn_fuse(p), out_h, out_w);
}

template <typename T>
ParamList<T> UperNetHead<T>::params(const std::string& prefix) const {
    ParamList<T> out;
    up4_a.collect(out, prefix + ".up4.0");
    up4_b.collect(out, prefix + ".up4.1");
    up2.collect(out, prefix + ".up2");
    for (std::size_t i = 0; i < 4; ++i) ppm_branch[i].collect(out, prefix + ".ppm." + std::to_string(i));
    ppm_bottleneck.collect(out, prefix + ".ppm.bottleneck");
    for (std::size_t i = 0; i < 3; ++i) {
        lateral[i].collect(out, prefix + ".lateral." + std::to_string(i));
        fpn_out[i].collect(out, prefix + ".fpn." + std::to_string(i));
    }
    fusion.collect(out, prefix + ".fusion");
    classifier.collect(out, prefix + ".classifier");
    return out;
}

template <typename T>
Tensor<T> UNet<T>::DoubleConv::operator()(const Tensor<T>& x) const {
    return relu(b(relu(a(x))));
}

template <typename T>
UNet<T>::UNet(std::size_t in_channels, std::size_t n_classes, std::size_t base, Rng& rng) {
    std::size_t c = in_channels;
    for (std::size_t i = 0; i < 4; ++i) {
        const std::size_t w = base << i;
        down_[i] = {Conv2d<T>(c, w, 3, 1, 1, rng), Conv2d<T>(w, w, 3, 1, 1, rng)};
        c = w;
    }
    bottom_ = {Conv2d<T>(c, 2 * c, 3, 1, 1, rng), Conv2d<T>(2 * c, 2 * c, 3, 1, 1, rng)};
    c *= 2;
    for (std::size_t i = 4; i-- > 0;) {
        const std::size_t w = base << i;
        up_[i] = ConvTranspose2d<T>(c, w, 2, 2, rng);
        merge_[i] = {Conv2d<T>(2 * w, w, 3, 1, 1, rng), Conv2d<T>(w, w, 3, 1, 1, rng)};
        c = w;
    }
    head_ = Conv2d<T>(base, n_classes, 1, 1, 0, rng);
}

template <typename T>
Tensor<T> UNet<T>::operator()(const Tensor<T>& images) const {
    if (images.dim() != 4 || images.size(2) % 16 != 0 || images.size(3) % 16 != 0 || images.size(2) == 0)
        throw DimensionError("UNet input must be [B x C x H x W] with H, W divisible by 16, got " +
                             shape_str(images.shape()));
    std::array<Tensor<T>, 4> skips;
    Tensor<T> x = images;
    for (std::size_t i = 0; i < 4; ++i) {
        skips[i] = down_[i](x);
        x = max_pool2d(skips[i], 2, 2);
    }
    x = bottom_(x);
    for (std::size_t i = 4; i-- > 0;) {
        x = up_[i](x);
        auto skip = use_skips ? skips[i] : Tensor<T>::zeros(skips[i].shape());
        x = merge_[i](concat<T>({skip, x}, 1));
    }
    return head_(x);
}

template <typename T>
ParamList<T> UNet<T>::params(const std::string& prefix) const {
    ParamList<T> out;
    for (std::size_t i = 0; i < 4; ++i) {
        down_[i].a.collect(out, prefix + ".down." + std::to_string(i) + ".0");
        down_[i].b.collect(out, prefix + ".down." + std::to_string(i) + ".1");
    }
    bottom_.a.collect(out, prefix + ".bottom.0");
    bottom_.b.collect(out, prefix + ".bottom.1");
    for (std::size_t i = 0; i < 4; ++i) {
        up_[i].collect(out, prefix + ".up." + std::to_string(i));
        merge_[i].a.collect(out, prefix + ".merge." + std::to_string(i) + ".0");
        merge_[i].b.collect(out, prefix + ".merge." + std::to_string(i) + ".1");
    }
    head_.collect(out, prefix + ".classifier");
    return out;
}

template Tensor<float> tokens_to_map(const Tensor<float>&, std::size_t, std::size_t);
template Tensor<double> tokens_to_map(const Tensor<double>&, std::size_t, std::size_t);
template class UperNetHead<float>;
template class UperNetHead<double>;
template class UNet<float>;
template class UNet<double>;

}  // namespace tmae
