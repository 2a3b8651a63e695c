#include <cmath>
#include <limits>

#include "internal.hpp"
#include "tmae/ops.hpp"

namespace tmae {

using detail::parent_data;
using detail::parent_grad;
using detail::record;
using detail::require;

namespace {

struct AxisView {
    std::size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
    require(axis < s.size(), "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    AxisView v;
    for (std::size_t d = 0; d < axis; ++d) v.outer *= s[d];
    v.len = s[axis];
    for (std::size_t d = axis + 1; d < s.size(); ++d) v.inner *= s[d];
    return v;
}

}  // namespace

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    const auto v = axis_view(x.shape(), axis);
    const auto xv = x.data();
    std::vector<T> out(xv.size());
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t base = o * v.len * v.inner + i;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < v.len; ++j) mx = std::max(mx, xv[base + j * v.inner]);
            double total = 0.0;
            for (std::size_t j = 0; j < v.len; ++j) {
                const T e = std::exp(xv[base + j * v.inner] - mx);
                out[base + j * v.inner] = e;
                total += e;
            }
            const double inv = 1.0 / total;
            for (std::size_t j = 0; j < v.len; ++j)
                out[base + j * v.inner] = static_cast<T>(out[base + j * v.inner] * inv);
        }
    return record<T>(x.shape(), std::move(out), {x}, "softmax", [v](TensorNode<T>& node) {
        auto gx = parent_grad(node, 0);
        const auto& y = node.data;
        const auto& g = node.grad;
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t i = 0; i < v.inner; ++i) {
                const std::size_t base = o * v.len * v.inner + i;
                double dot = 0.0;
                for (std::size_t j = 0; j < v.len; ++j) dot += g[base + j * v.inner] * y[base + j * v.inner];
                for (std::size_t j = 0; j < v.len; ++j) {
                    const std::size_t k = base + j * v.inner;
                    gx[k] += static_cast<T>(y[k] * (g[k] - dot));
                }
            }
    });
}

template <typename T>
Tensor<T> log_softmax(const Tensor<T>& x, std::size_t axis) {
    const auto v = axis_view(x.shape(), axis);
    const auto xv = x.data();
    std::vector<T> out(xv.size());
    for (std::size_t o = 0; o < v.outer; ++o)
        for (std::size_t i = 0; i < v.inner; ++i) {
            const std::size_t base = o * v.len * v.inner + i;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < v.len; ++j) mx = std::max(mx, xv[base + j * v.inner]);
            double total = 0.0;
            for (std::size_t j = 0; j < v.len; ++j) total += std::exp(static_cast<double>(xv[base + j * v.inner] - mx));
            const double lse = static_cast<double>(mx) + std::log(total);
            for (std::size_t j = 0; j < v.len; ++j)
                out[base + j * v.inner] = static_cast<T>(xv[base + j * v.inner] - lse);
        }
    return record<T>(x.shape(), std::move(out), {x}, "log_softmax", [v](TensorNode<T>& node) {
        auto gx = parent_grad(node, 0);
        const auto& y = node.data;
        const auto& g = node.grad;
        for (std::size_t o = 0; o < v.outer; ++o)
            for (std::size_t i = 0; i < v.inner; ++i) {
                const std::size_t base = o * v.len * v.inner + i;
                double gsum = 0.0;
                for (std::size_t j = 0; j < v.len; ++j) gsum += g[base + j * v.inner];
                for (std::size_t j = 0; j < v.len; ++j) {
                    const std::size_t k = base + j * v.inner;
                    gx[k] += static_cast<T>(g[k] - std::exp(static_cast<double>(y[k])) * gsum);
                }
            }
    });
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
    const std::size_t d = x.shape().back();
    if (gamma.numel() != d || beta.numel() != d)
        throw DimensionError("layer_norm: last extent " + std::to_string(d) + " vs gamma " +
                             shape_str(gamma.shape()) + ", beta " + shape_str(beta.shape()));
    if (!(eps > 0.0)) throw ContractError("layer_norm: eps must be positive");
    const std::size_t rows = x.numel() / d;
    const auto xv = x.data();
    const auto gv = gamma.data();
    const auto bv = beta.data();
    std::vector<T> out(xv.size());
    std::vector<T> xhat(xv.size());
    std::vector<T> rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const T* row = xv.data() + r * d;
        double m = 0.0;
        for (std::size_t j = 0; j < d; ++j) m += row[j];
        m /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double c = row[j] - m;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd[r] = static_cast<T>(rs);
        for (std::size_t j = 0; j < d; ++j) {
            const T h = static_cast<T>((row[j] - m) * rs);
            xhat[r * d + j] = h;
            out[r * d + j] = h * gv[j] + bv[j];
        }
    }
    return record<T>(x.shape(), std::move(out), {x, gamma, beta}, "layer_norm",
                     [xhat = std::move(xhat), rstd = std::move(rstd), rows, d](TensorNode<T>& node) {
                         auto gx = parent_grad(node, 0);
                         auto gg = parent_grad(node, 1);
                         auto gb = parent_grad(node, 2);
                         const auto gv = parent_data(node, 1);
                         const auto& g = node.grad;
                         std::vector<double> acc_g(d, 0.0), acc_b(d, 0.0);
                         for (std::size_t r = 0; r < rows; ++r) {
                             const std::size_t base = r * d;
                             double mean_dh = 0.0, mean_dh_h = 0.0;
                             for (std::size_t j = 0; j < d; ++j) {
                                 const double dh = static_cast<double>(g[base + j]) * gv[j];
                                 mean_dh += dh;
                                 mean_dh_h += dh * xhat[base + j];
                                 acc_g[j] += static_cast<double>(g[base + j]) * xhat[base + j];
                                 acc_b[j] += g[base + j];
                             }
                             if (gx.empty()) continue;
                             mean_dh /= static_cast<double>(d);
                             mean_dh_h /= static_cast<double>(d);
                             for (std::size_t j = 0; j < d; ++j) {
                                 const double dh = static_cast<double>(g[base + j]) * gv[j];
                                 gx[base + j] += static_cast<T>(
                                     rstd[r] * (dh - mean_dh - xhat[base + j] * mean_dh_h));
                             }
                         }
                         for (std::size_t j = 0; j < d; ++j) {
                             if (!gg.empty()) gg[j] += static_cast<T>(acc_g[j]);
                             if (!gb.empty()) gb[j] += static_cast<T>(acc_b[j]);
                         }
                     });
}

template <typename T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels,
                                 std::span<const double> class_weights, int ignore_index) {
    if (logits.dim() != 4)
        throw DimensionError("cross entropy expects [B x K x H x W], got " + shape_str(logits.shape()));
    const std::size_t b = logits.size(0), k = logits.size(1), h = logits.size(2), w = logits.size(3);
    const std::size_t hw = h * w;
    if (labels.size() != b * hw)
        throw DimensionError("cross entropy: " + std::to_string(labels.size()) + " labels for logits " +
                             shape_str(logits.shape()));
    std::vector<double> weights(k, 1.0);
    if (!class_weights.empty()) {
        if (class_weights.size() != k)
            throw DimensionError("cross entropy: " + std::to_string(class_weights.size()) +
                                 " class weights for " + std::to_string(k) + " classes");
        double mx = 0.0;
        for (double cw : class_weights) {
            if (!(cw > 0.0)) throw ConfigError("class weights must be positive");
            mx = std::max(mx, cw);
        }
        for (std::size_t c = 0; c < k; ++c) weights[c] = class_weights[c] / mx;
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y != ignore_index && y >= static_cast<int>(k)) {
            const std::size_t img = i / hw, r = (i % hw) / w, c = i % w;
            throw DataError("label " + std::to_string(y) + " out of range for " + std::to_string(k) +
                            " classes at image " + std::to_string(img) + " pixel (" + std::to_string(r) +
                            ", " + std::to_string(c) + ")");
        }
    }

    const auto lv = logits.data();
    double total = 0.0, weight_sum = 0.0;
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t p = 0; p < hw; ++p) {
            const int y = labels[n * hw + p];
            if (y == ignore_index) continue;
            const T* base = lv.data() + n * k * hw + p;
            T mx = base[0];
            for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, base[c * hw]);
            double z = 0.0;
            for (std::size_t c = 0; c < k; ++c) z += std::exp(static_cast<double>(base[c * hw] - mx));
            const double logp = static_cast<double>(base[y * hw] - mx) - std::log(z);
            total -= weights[y] * logp;
            weight_sum += weights[y];
        }
    const double loss = weight_sum > 0.0 ? total / weight_sum : 0.0;
    std::vector<std::uint8_t> saved(labels.begin(), labels.end());
    return record<T>({1}, {static_cast<T>(loss)}, {logits}, "weighted_cross_entropy",
                     [saved = std::move(saved), weights, weight_sum, ignore_index, b, k, hw](TensorNode<T>& node) {
                         if (weight_sum <= 0.0) return;
                         auto gl = parent_grad(node, 0);
                         const auto lv = parent_data(node, 0);
                         const double g = static_cast<double>(node.grad[0]) / weight_sum;
                         std::vector<double> e(k);
                         for (std::size_t n = 0; n < b; ++n)
                             for (std::size_t p = 0; p < hw; ++p) {
                                 const int y = saved[n * hw + p];
                                 if (y == ignore_index) continue;
                                 const std::size_t off = n * k * hw + p;
                                 T mx = lv[off];
                                 for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, lv[off + c * hw]);
                                 double z = 0.0;
                                 for (std::size_t c = 0; c < k; ++c) {
                                     e[c] = std::exp(static_cast<double>(lv[off + c * hw] - mx));
                                     z += e[c];
                                 }
                                 const double s = g * weights[y];
                                 for (std::size_t c = 0; c < k; ++c) {
                                     const double target = static_cast<int>(c) == y ? 1.0 : 0.0;
                                     gl[off + c * hw] += static_cast<T>(s * (e[c] / z - target));
                                 }
                             }
                     });
}

template <typename T>
std::vector<std::uint8_t> argmax_channels(const Tensor<T>& logits) {
    if (logits.dim() != 4)
        throw DimensionError("argmax_channels expects [B x K x H x W], got " + shape_str(logits.shape()));
    const std::size_t b = logits.size(0), k = logits.size(1), hw = logits.size(2) * logits.size(3);
    const auto lv = logits.data();
    std::vector<std::uint8_t> out(b * hw);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t p = 0; p < hw; ++p) {
            const T* base = lv.data() + n * k * hw + p;
            std::size_t best = 0;
            for (std::size_t c = 1; c < k; ++c)
                if (base[c * hw] > base[best * hw]) best = c;
            out[n * hw + p] = static_cast<std::uint8_t>(best);
        }
    return out;
}

#define TMAE_INSTANTIATE(T)                                                                       \
    template Tensor<T> softmax(const Tensor<T>&, std::size_t);                                    \
    template Tensor<T> log_softmax(const Tensor<T>&, std::size_t);                                \
    template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);  \
    template Tensor<T> weighted_cross_entropy(const Tensor<T>&, std::span<const std::uint8_t>,    \
                                              std::span<const double>, int);                      \
    template std::vector<std::uint8_t> argmax_channels(const Tensor<T>&);

TMAE_INSTANTIATE(float)
TMAE_INSTANTIATE(double)

}  // namespace tmae
