#include <cmath>

#include "internal.hpp"
#include "tmae/ops.hpp"

namespace tmae {

using detail::parent_data;
using detail::parent_grad;
using detail::record;

namespace {

struct Broadcast {
    Shape out;
    std::vector<std::size_t> a_strides;  // aligned to out rank, 0 on broadcast axes
    std::vector<std::size_t> b_strides;
    bool same = false;
};

std::vector<std::size_t> aligned_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t s = 1;
    const std::size_t off = out.size() - in.size();
    for (std::size_t i = in.size(); i-- > 0;) {
        strides[i + off] = in[i] == 1 && out[i + off] != 1 ? 0 : s;
        s *= in[i];
    }
    return strides;
}

Broadcast broadcast(const Shape& a, const Shape& b) {
    Broadcast bc;
    if (a == b) {
        bc.out = a;
        bc.same = true;
        return bc;
    }
    const std::size_t rank = std::max(a.size(), b.size());
    bc.out.assign(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t ea = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t eb = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (ea != eb && ea != 1 && eb != 1)
            throw DimensionError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        bc.out[i] = std::max(ea, eb);
    }
    bc.a_strides = aligned_strides(a, bc.out);
    bc.b_strides = aligned_strides(b, bc.out);
    return bc;
}

/// Calls fn(out_index, a_index, b_index) for every output element.
template <typename Fn>
void for_each_broadcast(const Broadcast& bc, Fn&& fn) {
    const std::size_t n = shape_numel(bc.out);
    if (bc.same) {
        for (std::size_t i = 0; i < n; ++i) fn(i, i, i);
        return;
    }
    const std::size_t rank = bc.out.size();
    const std::size_t inner = bc.out[rank - 1];
    const std::size_t sa = bc.a_strides[rank - 1];
    const std::size_t sb = bc.b_strides[rank - 1];
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ai = 0, bi = 0;
    for (std::size_t o = 0; o < n; o += inner) {
        for (std::size_t j = 0; j < inner; ++j) fn(o + j, ai + j * sa, bi + j * sb);
        // Advance the odometer over all but the innermost axis.
        for (std::size_t d = rank - 1; d-- > 0;) {
            ++idx[d];
            ai += bc.a_strides[d];
            bi += bc.b_strides[d];
            if (idx[d] < bc.out[d]) break;
            ai -= bc.a_strides[d] * idx[d];
            bi -= bc.b_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
}

enum class BinOp { Add, Sub, Mul, Div };

template <typename T, BinOp Op>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name) {
    auto bc = broadcast(a.shape(), b.shape());
    std::vector<T> out(shape_numel(bc.out));
    const auto av = a.data();
    const auto bv = b.data();
    for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) {
        if constexpr (Op == BinOp::Add) out[o] = av[i] + bv[j];
        if constexpr (Op == BinOp::Sub) out[o] = av[i] - bv[j];
        if constexpr (Op == BinOp::Mul) out[o] = av[i] * bv[j];
        if constexpr (Op == BinOp::Div) out[o] = av[i] / bv[j];
    });
    return record<T>(bc.out, std::move(out), {a, b}, name, [bc](TensorNode<T>& node) {
        auto ga = parent_grad(node, 0);
        auto gb = parent_grad(node, 1);
        const auto av = parent_data(node, 0);
        const auto bv = parent_data(node, 1);
        const auto& g = node.grad;
        for_each_broadcast(bc, [&](std::size_t o, std::size_t i, std::size_t j) {
            if constexpr (Op == BinOp::Add) {
                if (!ga.empty()) ga[i] += g[o];
                if (!gb.empty()) gb[j] += g[o];
            }
            if constexpr (Op == BinOp::Sub) {
                if (!ga.empty()) ga[i] += g[o];
                if (!gb.empty()) gb[j] -= g[o];
            }
            if constexpr (Op == BinOp::Mul) {
                if (!ga.empty()) ga[i] += g[o] * bv[j];
                if (!gb.empty()) gb[j] += g[o] * av[i];
            }
            if constexpr (Op == BinOp::Div) {
                if (!ga.empty()) ga[i] += g[o] / bv[j];
                if (!gb.empty()) gb[j] -= g[o] * av[i] / (bv[j] * bv[j]);
            }
        });
    });
}

/// Elementwise map; dfn(x, y) is dy/dx.
template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& a, const char* name, F fn, DF dfn) {
    const auto av = a.data();
    std::vector<T> out(av.size());
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fn(av[i]);
    return record<T>(a.shape(), std::move(out), {a}, name, [dfn](TensorNode<T>& node) {
        auto ga = parent_grad(node, 0);
        const auto av = parent_data(node, 0);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += node.grad[i] * dfn(av[i], node.data[i]);
    });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return binary<T, BinOp::Add>(a, b, "add");
}
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return binary<T, BinOp::Sub>(a, b, "sub");
}
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return binary<T, BinOp::Mul>(a, b, "mul");
}
template <typename T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return binary<T, BinOp::Div>(a, b, "div");
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double s) {
    const T k = static_cast<T>(s);
    return unary(a, "scale", [k](T x) { return x * k; }, [k](T, T) { return k; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, double s) {
    const T k = static_cast<T>(s);
    return unary(a, "add_scalar", [k](T x) { return x + k; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
    return unary(a, "square", [](T x) { return x * x; }, [](T x, T) { return T(2) * x; });
}

template <typename T>
Tensor<T> exp(const Tensor<T>& a) {
    return unary(a, "exp", [](T x) { return std::exp(x); }, [](T, T y) { return y; });
}

template <typename T>
Tensor<T> log(const Tensor<T>& a) {
    return unary(a, "log", [](T x) { return std::log(x); }, [](T x, T) { return T(1) / x; });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
    return unary(
        a, "relu", [](T x) { return x > T(0) ? x : T(0); },
        [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
    return unary(a, "tanh", [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
    constexpr T kAlpha = T(0.7978845608028654);  // sqrt(2 / pi)
    constexpr T kCubic = T(0.044715);
    return unary(
        a, "gelu",
        [](T x) { return T(0.5) * x * (T(1) + std::tanh(kAlpha * (x + kCubic * x * x * x))); },
        [](T x, T) {
            const T u = kAlpha * (x + kCubic * x * x * x);
            const T t = std::tanh(u);
            const T du = kAlpha * (T(1) + T(3) * kCubic * x * x);
            return T(0.5) * (T(1) + t) + T(0.5) * x * (T(1) - t * t) * du;
        });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
    double acc = 0.0;
    for (auto v : a.data()) acc += static_cast<double>(v);
    return record<T>({1}, {static_cast<T>(acc)}, {a}, "sum", [](TensorNode<T>& node) {
        auto ga = parent_grad(node, 0);
        const T g = node.grad[0];
        for (auto& x : ga) x += g;
    });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
    double acc = 0.0;
    for (auto v : a.data()) acc += static_cast<double>(v);
    const double n = static_cast<double>(a.numel());
    return record<T>({1}, {static_cast<T>(acc / n)}, {a}, "mean", [n](TensorNode<T>& node) {
        auto ga = parent_grad(node, 0);
        const T g = static_cast<T>(static_cast<double>(node.grad[0]) / n);
        for (auto& x : ga) x += g;
    });
}

template <typename T>
Tensor<T> mse(const Tensor<T>& pred, const Tensor<T>& target) {
    if (pred.shape() != target.shape())
        throw DimensionError("mse shape mismatch " + shape_str(pred.shape()) + " vs " +
                             shape_str(target.shape()));
    const auto p = pred.data();
    const auto t = target.data();
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
        acc += d * d;
    }
    const double n = static_cast<double>(p.size());
    return record<T>({1}, {static_cast<T>(acc / n)}, {pred, target}, "mse", [n](TensorNode<T>& node) {
        auto gp = parent_grad(node, 0);
        auto gt = parent_grad(node, 1);
        const auto p = parent_data(node, 0);
        const auto t = parent_data(node, 1);
        const double g = static_cast<double>(node.grad[0]) * 2.0 / n;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const T d = static_cast<T>(g * (static_cast<double>(p[i]) - static_cast<double>(t[i])));
            if (!gp.empty()) gp[i] += d;
            if (!gt.empty()) gt[i] -= d;
        }
    });
}

#define TMAE_INSTANTIATE(T)                                                  \
    template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);              \
    template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);              \
    template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);              \
    template Tensor<T> div(const Tensor<T>&, const Tensor<T>&);              \
    template Tensor<T> scale(const Tensor<T>&, double);                      \
    template Tensor<T> add_scalar(const Tensor<T>&, double);                 \
    template Tensor<T> square(const Tensor<T>&);                             \
    template Tensor<T> exp(const Tensor<T>&);                                \
    template Tensor<T> log(const Tensor<T>&);                                \
    template Tensor<T> relu(const Tensor<T>&);                               \
    template Tensor<T> tanh(const Tensor<T>&);                               \
    template Tensor<T> gelu(const Tensor<T>&);                               \
    template Tensor<T> sum(const Tensor<T>&);                                \
    template Tensor<T> mean(const Tensor<T>&);                               \
    template Tensor<T> mse(const Tensor<T>&, const Tensor<T>&);

TMAE_INSTANTIATE(float)
TMAE_INSTANTIATE(double)

}  // namespace tmae
