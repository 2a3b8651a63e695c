#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

#include "internal.hpp"
#include "tmae/ops.hpp"
#include "tmae/parallel.hpp"

namespace tmae {

using detail::gemm;
using detail::parent_data;
using detail::parent_grad;
using detail::record;
using detail::require;

namespace {

struct Geometry {
    std::size_t c, h, w;  // image being unfolded
    std::size_t kh, kw, stride, pad;
    std::size_t oh, ow;  // sliding-window positions
};

// Output columns [lo, hi) whose input x = ox * stride + j - pad lands inside [0, w).
std::pair<std::size_t, std::size_t> valid_span(const Geometry& g, std::size_t j) {
    const long s = static_cast<long>(g.stride), off = static_cast<long>(j) - static_cast<long>(g.pad);
    const long w = static_cast<long>(g.w), ow = static_cast<long>(g.ow);
    const long lo = off >= 0 ? 0 : std::min(ow, (-off + s - 1) / s);
    const long hi = w - off <= 0 ? 0 : std::min(ow, (w - off + s - 1) / s);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, hi))};
}

template <typename T>
void im2col(const T* img, const Geometry& g, T* cols) {
    const std::size_t plane = g.oh * g.ow;
    for (std::size_t c = 0; c < g.c; ++c)
        for (std::size_t i = 0; i < g.kh; ++i)
            for (std::size_t j = 0; j < g.kw; ++j) {
                T* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
                const auto [lo, hi] = valid_span(g, j);
                const long off = static_cast<long>(j) - static_cast<long>(g.pad);
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long y = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
                    T* dst = row + oy * g.ow;
                    if (y < 0 || y >= static_cast<long>(g.h)) {
                        std::fill_n(dst, g.ow, T(0));
                        continue;
                    }
                    const T* src = img + (c * g.h + static_cast<std::size_t>(y)) * g.w;
                    std::fill_n(dst, lo, T(0));
                    if (g.stride == 1) {
                        std::copy_n(src + static_cast<long>(lo) + off, hi - lo, dst + lo);
                    } else {
                        for (std::size_t ox = lo; ox < hi; ++ox) dst[ox] = src[static_cast<long>(ox * g.stride) + off];
                    }
                    std::fill(dst + hi, dst + g.ow, T(0));
                }
            }
}

template <typename T>
void col2im(const T* cols, const Geometry& g, T* img) {
    const std::size_t plane = g.oh * g.ow;
    for (std::size_t c = 0; c < g.c; ++c)
        for (std::size_t i = 0; i < g.kh; ++i)
            for (std::size_t j = 0; j < g.kw; ++j) {
                const T* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
                const auto [lo, hi] = valid_span(g, j);
                const long off = static_cast<long>(j) - static_cast<long>(g.pad);
                for (std::size_t oy = 0; oy < g.oh; ++oy) {
                    const long y = static_cast<long>(oy * g.stride + i) - static_cast<long>(g.pad);
                    if (y < 0 || y >= static_cast<long>(g.h)) continue;
                    T* dst = img + (c * g.h + static_cast<std::size_t>(y)) * g.w;
                    const T* src = row + oy * g.ow;
                    for (std::size_t ox = lo; ox < hi; ++ox) dst[static_cast<long>(ox * g.stride) + off] += src[ox];
                }
            }
}

bool is_pointwise(const Geometry& g) { return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0; }

void require_nchw(const Shape& s, const char* op) {
    require(s.size() == 4, std::string(op) + " expects N x C x H x W, got " + shape_str(s));
}

template <typename T>
void add_channel_bias(std::vector<T>& out, std::span<const T> bias, std::size_t n, std::size_t k,
                      std::size_t plane) {
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t c = 0; c < k; ++c) {
            T* p = out.data() + (b * k + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) p[i] += bias[c];
        }
}

template <typename T>
void accumulate_channel_bias_grad(std::span<T> gb, const std::vector<T>& g, std::size_t n, std::size_t k,
                                  std::size_t plane) {
    for (std::size_t c = 0; c < k; ++c) {
        double acc = 0.0;
        for (std::size_t b = 0; b < n; ++b) {
            const T* p = g.data() + (b * k + c) * plane;
            for (std::size_t i = 0; i < plane; ++i) acc += p[i];
        }
        gb[c] += static_cast<T>(acc);
    }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, std::size_t stride,
                 std::size_t pad) {
    require_nchw(x.shape(), "conv2d");
    require(w.dim() == 4 && w.size(1) == x.size(1),
            "conv2d weight " + shape_str(w.shape()) + " does not match input " + shape_str(x.shape()));
    require(!bias.defined() || bias.numel() == w.size(0), "conv2d bias does not match weight");
    require(stride > 0, "conv2d stride must be positive");
    const std::size_t n = x.size(0), k = w.size(0);
    Geometry g{x.size(1), x.size(2), x.size(3), w.size(2), w.size(3), stride, pad, 0, 0};
    require(g.h + 2 * pad >= g.kh && g.w + 2 * pad >= g.kw,
            "conv2d kernel larger than padded input " + shape_str(x.shape()));
    g.oh = (g.h + 2 * pad - g.kh) / stride + 1;
    g.ow = (g.w + 2 * pad - g.kw) / stride + 1;
    const std::size_t plane = g.oh * g.ow, ckk = g.c * g.kh * g.kw, in_sz = g.c * g.h * g.w;

    std::vector<T> out(n * k * plane);
    const T* xv = x.data().data();
    const T* wv = w.data().data();
    parallel_for(n, [&](std::size_t lo, std::size_t hi) {
        std::vector<T> cols(is_pointwise(g) ? 0 : ckk * plane);
        for (std::size_t b = lo; b < hi; ++b) {
            const T* src = xv + b * in_sz;
            if (!is_pointwise(g)) {
                im2col(src, g, cols.data());
                src = cols.data();
            }
            gemm(wv, false, src, false, out.data() + b * k * plane, k, plane, ckk, false);
        }
    });
    if (bias.defined()) add_channel_bias(out, bias.data(), n, k, plane);

    return record<T>({n, k, g.oh, g.ow}, std::move(out), {x, w, bias}, "conv2d",
                     [g, n, k, plane, ckk, in_sz](TensorNode<T>& node) {
                         auto gx = parent_grad(node, 0);
                         auto gw = parent_grad(node, 1);
                         auto gb = parent_grad(node, 2);
                         const T* xv = parent_data(node, 0).data();
                         const T* wv = parent_data(node, 1).data();
                         const T* gout = node.grad.data();
                         std::vector<T> cols(ckk * plane);
                         for (std::size_t b = 0; b < n; ++b) {
                             const T* go = gout + b * k * plane;
                             if (!gw.empty()) {
                                 const T* src = xv + b * in_sz;
                                 if (!is_pointwise(g)) {
                                     im2col(src, g, cols.data());
                                     src = cols.data();
                                 }
                                 gemm(go, false, src, true, gw.data(), k, ckk, plane, true);
                             }
                             if (!gx.empty()) {
                                 if (is_pointwise(g)) {
                                     gemm(wv, true, go, false, gx.data() + b * in_sz, ckk, plane, k, true);
                                 } else {
                                     gemm(wv, true, go, false, cols.data(), ckk, plane, k, false);
                                     col2im(cols.data(), g, gx.data() + b * in_sz);
                                 }
                             }
                         }
                         if (!gb.empty()) accumulate_channel_bias_grad(gb, node.grad, n, k, plane);
                     });
}

template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                           std::size_t stride, std::size_t pad) {
    require_nchw(x.shape(), "conv_transpose2d");
    require(w.dim() == 4 && w.size(0) == x.size(1),
            "conv_transpose2d weight " + shape_str(w.shape()) + " does not match input " +
                shape_str(x.shape()));
    require(!bias.defined() || bias.numel() == w.size(1), "conv_transpose2d bias does not match weight");
    require(stride > 0, "conv_transpose2d stride must be positive");
    const std::size_t n = x.size(0), cin = x.size(1), h = x.size(2), wd = x.size(3);
    const std::size_t k = w.size(1), kh = w.size(2), kw = w.size(3);
    require((h - 1) * stride + kh > 2 * pad && (wd - 1) * stride + kw > 2 * pad,
            "conv_transpose2d output would be empty");
    const std::size_t oh = (h - 1) * stride + kh - 2 * pad;
    const std::size_t ow = (wd - 1) * stride + kw - 2 * pad;
    // The unfold geometry of the output image; its windows line up with input pixels.
    const Geometry g{k, oh, ow, kh, kw, stride, pad, h, wd};
    const std::size_t kkk = k * kh * kw, hw = h * wd, out_plane = oh * ow;

    std::vector<T> out(n * k * out_plane, T(0));
    const T* xv = x.data().data();
    const T* wv = w.data().data();
    parallel_for(n, [&](std::size_t lo, std::size_t hi) {
        std::vector<T> cols(kkk * hw);
        for (std::size_t b = lo; b < hi; ++b) {
            gemm(wv, true, xv + b * cin * hw, false, cols.data(), kkk, hw, cin, false);
            col2im(cols.data(), g, out.data() + b * k * out_plane);
        }
    });
    if (bias.defined()) add_channel_bias(out, bias.data(), n, k, out_plane);

    return record<T>({n, k, oh, ow}, std::move(out), {x, w, bias}, "conv_transpose2d",
                     [g, n, cin, k, kkk, hw, out_plane](TensorNode<T>& node) {
                         auto gx = parent_grad(node, 0);
                         auto gw = parent_grad(node, 1);
                         auto gb = parent_grad(node, 2);
                         const T* xv = parent_data(node, 0).data();
                         const T* wv = parent_data(node, 1).data();
                         std::vector<T> cols(kkk * hw);
                         for (std::size_t b = 0; b < n; ++b) {
                             im2col(node.grad.data() + b * k * out_plane, g, cols.data());
                             if (!gx.empty())
                                 gemm(wv, false, cols.data(), false, gx.data() + b * cin * hw, cin, hw, kkk, true);
                             if (!gw.empty())
                                 gemm(xv + b * cin * hw, false, cols.data(), true, gw.data(), cin, kkk, hw, true);
                         }
                         if (!gb.empty()) accumulate_channel_bias_grad(gb, node.grad, n, k, out_plane);
                     });
}

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, std::size_t window, std::size_t stride) {
    require_nchw(x.shape(), "max_pool2d");
    const std::size_t nc = x.size(0) * x.size(1), h = x.size(2), w = x.size(3);
    require(window > 0 && stride > 0 && window <= h && window <= w,
            "max_pool2d window " + std::to_string(window) + " / stride " + std::to_string(stride) +
                " invalid for " + shape_str(x.shape()));
    const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
    const auto xv = x.data();
    std::vector<T> out(nc * oh * ow);
    std::vector<std::size_t> arg(out.size());
    for (std::size_t p = 0; p < nc; ++p)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = p * h * w + oy * stride * w + ox * stride;
                for (std::size_t i = 0; i < window; ++i)
                    for (std::size_t j = 0; j < window; ++j) {
                        const std::size_t idx = p * h * w + (oy * stride + i) * w + ox * stride + j;
                        if (xv[idx] > xv[best]) best = idx;
                    }
                const std::size_t o = (p * oh + oy) * ow + ox;
                out[o] = xv[best];
                arg[o] = best;
            }
    return record<T>({x.size(0), x.size(1), oh, ow}, std::move(out), {x}, "max_pool2d",
                     [arg = std::move(arg)](TensorNode<T>& node) {
                         auto gx = parent_grad(node, 0);
                         for (std::size_t o = 0; o < arg.size(); ++o) gx[arg[o]] += node.grad[o];
                     });
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, std::size_t window, std::size_t stride) {
    require_nchw(x.shape(), "avg_pool2d");
    const std::size_t nc = x.size(0) * x.size(1), h = x.size(2), w = x.size(3);
    require(window > 0 && stride > 0 && window <= h && window <= w,
            "avg_pool2d window " + std::to_string(window) + " / stride " + std::to_string(stride) +
                " invalid for " + shape_str(x.shape()));
    const std::size_t oh = (h - window) / stride + 1, ow = (w - window) / stride + 1;
    const double inv = 1.0 / static_cast<double>(window * window);
    const auto xv = x.data();
    std::vector<T> out(nc * oh * ow);
    for (std::size_t p = 0; p < nc; ++p)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (std::size_t i = 0; i < window; ++i)
                    for (std::size_t j = 0; j < window; ++j)
                        acc += xv[p * h * w + (oy * stride + i) * w + ox * stride + j];
                out[(p * oh + oy) * ow + ox] = static_cast<T>(acc * inv);
            }
    return record<T>({x.size(0), x.size(1), oh, ow}, std::move(out), {x}, "avg_pool2d",
                     [=](TensorNode<T>& node) {
                         auto gx = parent_grad(node, 0);
                         for (std::size_t p = 0; p < nc; ++p)
                             for (std::size_t oy = 0; oy < oh; ++oy)
                                 for (std::size_t ox = 0; ox < ow; ++ox) {
                                     const T g = static_cast<T>(node.grad[(p * oh + oy) * ow + ox] * inv);
                                     for (std::size_t i = 0; i < window; ++i)
                                         for (std::size_t j = 0; j < window; ++j)
                                             gx[p * h * w + (oy * stride + i) * w + ox * stride + j] += g;
                                 }
                     });
}

template <typename T>
Tensor<T> adaptive_avg_pool2d(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    require_nchw(x.shape(), "adaptive_avg_pool2d");
    require(out_h > 0 && out_w > 0, "adaptive_avg_pool2d output must be at least 1x1");
    const std::size_t nc = x.size(0) * x.size(1), h = x.size(2), w = x.size(3);
    auto bins = [](std::size_t in, std::size_t out) {
        std::vector<std::pair<std::size_t, std::size_t>> b(out);
        for (std::size_t i = 0; i < out; ++i) b[i] = {(i * in) / out, ((i + 1) * in + out - 1) / out};
        return b;
    };
    const auto rows = bins(h, out_h);
    const auto cols = bins(w, out_w);
    const auto xv = x.data();
    std::vector<T> out(nc * out_h * out_w);
    for (std::size_t p = 0; p < nc; ++p)
        for (std::size_t oy = 0; oy < out_h; ++oy)
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                double acc = 0.0;
                for (std::size_t y = rows[oy].first; y < rows[oy].second; ++y)
                    for (std::size_t xx = cols[ox].first; xx < cols[ox].second; ++xx) acc += xv[(p * h + y) * w + xx];
                const double area = static_cast<double>((rows[oy].second - rows[oy].first) *
                                                        (cols[ox].second - cols[ox].first));
                out[(p * out_h + oy) * out_w + ox] = static_cast<T>(acc / area);
            }
    return record<T>({x.size(0), x.size(1), out_h, out_w}, std::move(out), {x}, "adaptive_avg_pool2d",
                     [=](TensorNode<T>& node) {
                         auto gx = parent_grad(node, 0);
                         for (std::size_t p = 0; p < nc; ++p)
                             for (std::size_t oy = 0; oy < out_h; ++oy)
                                 for (std::size_t ox = 0; ox < out_w; ++ox) {
                                     const double area = static_cast<double>(
                                         (rows[oy].second - rows[oy].first) * (cols[ox].second - cols[ox].first));
                                     const T g = static_cast<T>(node.grad[(p * out_h + oy) * out_w + ox] / area);
                                     for (std::size_t y = rows[oy].first; y < rows[oy].second; ++y)
                                         for (std::size_t xx = cols[ox].first; xx < cols[ox].second; ++xx)
                                             gx[(p * h + y) * w + xx] += g;
                                 }
                     });
}

namespace {

struct Taps {
    std::vector<std::size_t> lo, hi;
    std::vector<double> frac;  // weight of hi
};

Taps bilinear_taps(std::size_t in, std::size_t out) {
    Taps t;
    const double s = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        double src = (static_cast<double>(i) + 0.5) * s - 0.5;
        if (src < 0.0) src = 0.0;
        auto lo = static_cast<std::size_t>(src);
        if (lo > in - 1) lo = in - 1;
        const std::size_t hi = std::min(lo + 1, in - 1);
        t.lo.push_back(lo);
        t.hi.push_back(hi);
        t.frac.push_back(src - static_cast<double>(lo));
    }
    return t;
}

}  // namespace

template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    require_nchw(x.shape(), "bilinear_resize");
    require(out_h > 0 && out_w > 0, "bilinear_resize output must be at least 1x1");
    const std::size_t nc = x.size(0) * x.size(1), h = x.size(2), w = x.size(3);
    if (h == out_h && w == out_w) return reshape(x, x.shape());
    const Taps ty = bilinear_taps(h, out_h);
    const Taps tx = bilinear_taps(w, out_w);
    const auto xv = x.data();
    std::vector<T> out(nc * out_h * out_w);
    for (std::size_t p = 0; p < nc; ++p) {
        const T* src = xv.data() + p * h * w;
        T* dst = out.data() + p * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const T fy = static_cast<T>(ty.frac[oy]);
            const T* r0 = src + ty.lo[oy] * w;
            const T* r1 = src + ty.hi[oy] * w;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const T fx = static_cast<T>(tx.frac[ox]);
                const T top = r0[tx.lo[ox]] * (T(1) - fx) + r0[tx.hi[ox]] * fx;
                const T bot = r1[tx.lo[ox]] * (T(1) - fx) + r1[tx.hi[ox]] * fx;
                dst[oy * out_w + ox] = top * (T(1) - fy) + bot * fy;
            }
        }
    }
    return record<T>({x.size(0), x.size(1), out_h, out_w}, std::move(out), {x}, "bilinear_resize",
                     [=](TensorNode<T>& node) {
                         auto gx = parent_grad(node, 0);
                         for (std::size_t p = 0; p < nc; ++p) {
                             T* dst = gx.data() + p * h * w;
                             const T* g = node.grad.data() + p * out_h * out_w;
                             for (std::size_t oy = 0; oy < out_h; ++oy) {
                                 const T fy = static_cast<T>(ty.frac[oy]);
                                 for (std::size_t ox = 0; ox < out_w; ++ox) {
                                     const T fx = static_cast<T>(tx.frac[ox]);
                                     const T v = g[oy * out_w + ox];
                                     dst[ty.lo[oy] * w + tx.lo[ox]] += v * (T(1) - fy) * (T(1) - fx);
                                     dst[ty.lo[oy] * w + tx.hi[ox]] += v * (T(1) - fy) * fx;
                                     dst[ty.hi[oy] * w + tx.lo[ox]] += v * fy * (T(1) - fx);
                                     dst[ty.hi[oy] * w + tx.hi[ox]] += v * fy * fx;
                                 }
                             }
                         }
                     });
}

#define TMAE_INSTANTIATE(T)                                                                             \
    template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,        \
                              std::size_t);                                                             \
    template Tensor<T> conv_transpose2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,           \
                                        std::size_t, std::size_t);                                      \
    template Tensor<T> max_pool2d(const Tensor<T>&, std::size_t, std::size_t);                          \
    template Tensor<T> avg_pool2d(const Tensor<T>&, std::size_t, std::size_t);                          \
    template Tensor<T> adaptive_avg_pool2d(const Tensor<T>&, std::size_t, std::size_t);                 \
    template Tensor<T> bilinear_resize(const Tensor<T>&, std::size_t, std::size_t);

TMAE_INSTANTIATE(float)
TMAE_INSTANTIATE(double)

}  // namespace tmae
