#pragma once

#include <array>
#include <vector>

#include "tmae/config.hpp"
#include "tmae/layers.hpp"

namespace tmae {

/// Four maps [B x C_l x H_l x W_l] at strides 4, 8, 16, 32 (for 16 px patches).
template <typename T>
struct FeaturePyramid {
    std::array<Tensor<T>, 4> levels;
};

/// [B x N x D] tokens on a rows x cols grid -> [B x D x rows x cols].
template <typename T>
Tensor<T> tokens_to_map(const Tensor<T>& tokens, std::size_t rows, std::size_t cols);

/// Pyramid pooling, top-down FPN and classifier over four encoder taps.
template <typename T>
class UperNetHead {
   public:
    static constexpr std::array<std::size_t, 4> pool_scales{1, 2, 3, 6};

    UperNetHead() = default;
    UperNetHead(const ModelConfig& config, Rng& rng);

    /// Taps to maps, then x4 (two transposed convs), x2, identity and /2 (max pool).
    FeaturePyramid<T> pyramid(const std::vector<Tensor<T>>& taps, std::size_t rows, std::size_t cols) const;
    /// Pooled context branches on the coarsest level, fused to head width.
    Tensor<T> ppm(const Tensor<T>& top) const;
    /// Expects levels[3] to be the ppm output already; returns the fused stride-4 map.
    Tensor<T> fpn_fuse(const FeaturePyramid<T>& pyramid) const;
    /// 1x1 classifier, then bilinear resize to out_h x out_w.
    Tensor<T> classify(const Tensor<T>& fused, std::size_t out_h, std::size_t out_w) const;

    Tensor<T> operator()(const std::vector<Tensor<T>>& taps, std::size_t rows, std::size_t cols, std::size_t out_h,
                         std::size_t out_w) const;

    ParamList<T> params(const std::string& prefix = "head") const;

    std::array<Conv2d<T>, 3> lateral;     // levels 0..2
    std::array<Conv2d<T>, 3> fpn_out;     // 3x3 smoothing, levels 0..2
    std::array<Conv2d<T>, 4> ppm_branch;  // one per pool scale
    Conv2d<T> ppm_bottleneck;
    Conv2d<T> fusion;
    Conv2d<T> classifier;
    ConvTranspose2d<T> up4_a, up4_b, up2;

   private:
    std::size_t width_ = 0;
};

/// Four-level encoder/decoder with skip concatenation.
template <typename T>
class UNet {
   public:
    UNet() = default;
    UNet(std::size_t in_channels, std::size_t n_classes, std::size_t base, Rng& rng);

    /// images [B x C x H x W] with H, W divisible by 16 -> logits [B x K x H x W].
    Tensor<T> operator()(const Tensor<T>& images) const;

    ParamList<T> params(const std::string& prefix = "unet") const;

    /// When false, the decoder sees zeros in place of the skip features.
    bool use_skips = true;

   private:
    struct DoubleConv {
        Conv2d<T> a, b;
        Tensor<T> operator()(const Tensor<T>& x) const;
    };
    std::array<DoubleConv, 4> down_;
    DoubleConv bottom_;
    std::array<ConvTranspose2d<T>, 4> up_;
    std::array<DoubleConv, 4> merge_;
    Conv2d<T> head_;
};

}  // namespace tmae
