#include <numeric>

#include "internal.hpp"
#include "tmae/ops.hpp"

namespace tmae {

using detail::parent_data;
using detail::parent_grad;
using detail::record;
using detail::require;

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
    require(shape_numel(shape) == a.numel(),
            "cannot reshape " + shape_str(a.shape()) + " to " + shape_str(shape));
    std::vector<T> out(a.data().begin(), a.data().end());
    return record<T>(std::move(shape), std::move(out), {a}, "reshape", [](TensorNode<T>& node) {
        auto ga = parent_grad(node, 0);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += node.grad[i];
    });
}

namespace {

/// For output flat index o, the matching input offset under a permutation.
struct PermuteMap {
    Shape out_shape;
    std::vector<std::size_t> in_strides_for_out;  // stride in input of each output axis

    template <typename Fn>
    void for_each(Fn&& fn) const {
        const std::size_t rank = out_shape.size();
        const std::size_t n = shape_numel(out_shape);
        std::vector<std::size_t> idx(rank, 0);
        std::size_t in = 0;
        const std::size_t inner = out_shape[rank - 1];
        const std::size_t s_inner = in_strides_for_out[rank - 1];
        for (std::size_t o = 0; o < n; o += inner) {
            for (std::size_t j = 0; j < inner; ++j) fn(o + j, in + j * s_inner);
            for (std::size_t d = rank - 1; d-- > 0;) {
                ++idx[d];
                in += in_strides_for_out[d];
                if (idx[d] < out_shape[d]) break;
                in -= in_strides_for_out[d] * idx[d];
                idx[d] = 0;
            }
        }
    }
};

}  // namespace

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& dims) {
    const auto& in_shape = a.shape();
    const std::size_t rank = in_shape.size();
    require(dims.size() == rank, "permute rank mismatch for " + shape_str(in_shape));
    std::vector<bool> used(rank, false);
    for (auto d : dims) {
        require(d < rank && !used[d], "invalid permutation for " + shape_str(in_shape));
        used[d] = true;
    }
    std::vector<std::size_t> in_strides(rank, 1);
    for (std::size_t i = rank - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    PermuteMap map;
    for (auto d : dims) {
        map.out_shape.push_back(in_shape[d]);
        map.in_strides_for_out.push_back(in_strides[d]);
    }
    const auto av = a.data();
    std::vector<T> out(av.size());
    map.for_each([&](std::size_t o, std::size_t i) { out[o] = av[i]; });
    return record<T>(map.out_shape, std::move(out), {a}, "permute", [map](TensorNode<T>& node) {
        auto ga = parent_grad(node, 0);
        map.for_each([&](std::size_t o, std::size_t i) { ga[i] += node.grad[o]; });
    });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a, std::size_t d0, std::size_t d1) {
    std::vector<std::size_t> dims(a.dim());
    std::iota(dims.begin(), dims.end(), std::size_t{0});
    require(d0 < dims.size() && d1 < dims.size(), "transpose axis out of range");
    std::swap(dims[d0], dims[d1]);
    return permute(a, dims);
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    require(!parts.empty(), "concat of zero tensors");
    const Shape& first = parts[0].shape();
    require(axis < first.size(), "concat axis out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        require(p.dim() == first.size(), "concat rank mismatch");
        for (std::size_t d = 0; d < first.size(); ++d)
            if (d != axis)
                require(p.shape()[d] == first[d], "concat extent mismatch: " + shape_str(first) +
                                                      " vs " + shape_str(p.shape()));
        out_shape[axis] += p.shape()[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
    for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
    const std::size_t out_row = out_shape[axis] * inner;

    std::vector<std::size_t> offsets;  // start of each part inside an output row
    std::vector<T> out(shape_numel(out_shape));
    std::size_t off = 0;
    for (const auto& p : parts) {
        offsets.push_back(off);
        const std::size_t row = p.shape()[axis] * inner;
        const auto pv = p.data();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(pv.begin() + o * row, row, out.begin() + o * out_row + off);
        off += row;
    }
    return record<T>(out_shape, std::move(out), parts, "concat",
                     [offsets, outer, out_row](TensorNode<T>& node) {
                         for (std::size_t k = 0; k < node.parents.size(); ++k) {
                             auto gp = parent_grad(node, k);
                             if (gp.empty()) continue;
                             const std::size_t row = gp.size() / outer;
                             for (std::size_t o = 0; o < outer; ++o)
                                 for (std::size_t j = 0; j < row; ++j)
                                     gp[o * row + j] += node.grad[o * out_row + offsets[k] + j];
                         }
                     });
}

template <typename T>
Tensor<T> slice(const Tensor<T>& a, std::size_t axis, std::size_t start, std::size_t length) {
    const Shape& s = a.shape();
    require(axis < s.size() && length > 0 && start + length <= s[axis],
            "invalid slice of " + shape_str(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    Shape out_shape = s;
    out_shape[axis] = length;
    const std::size_t in_row = s[axis] * inner;
    const std::size_t out_row = length * inner;
    const std::size_t off = start * inner;
    const auto av = a.data();
    std::vector<T> out(outer * out_row);
    for (std::size_t o = 0; o < outer; ++o)
        std::copy_n(av.begin() + o * in_row + off, out_row, out.begin() + o * out_row);
    return record<T>(out_shape, std::move(out), {a}, "slice",
                     [outer, in_row, out_row, off](TensorNode<T>& node) {
                         auto ga = parent_grad(node, 0);
                         for (std::size_t o = 0; o < outer; ++o)
                             for (std::size_t j = 0; j < out_row; ++j)
                                 ga[o * in_row + off + j] += node.grad[o * out_row + j];
                     });
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, std::span<const std::size_t> ids, std::size_t k) {
    require(x.dim() == 3, "gather_rows expects [B x M x D], got " + shape_str(x.shape()));
    const std::size_t b = x.size(0), m = x.size(1), d = x.size(2);
    if (ids.size() != b * k)
        throw ContractError("gather_rows: " + std::to_string(ids.size()) + " ids for batch " +
                            std::to_string(b) + " x " + std::to_string(k));
    for (auto id : ids)
        if (id >= m) throw ContractError("gather_rows: row id " + std::to_string(id) + " >= " + std::to_string(m));
    const auto xv = x.data();
    std::vector<T> out(b * k * d);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < k; ++j)
            std::copy_n(xv.begin() + (i * m + ids[i * k + j]) * d, d, out.begin() + (i * k + j) * d);
    std::vector<std::size_t> saved(ids.begin(), ids.end());
    return record<T>({b, k, d}, std::move(out), {x}, "gather_rows",
                     [saved = std::move(saved), b, m, k, d](TensorNode<T>& node) {
                         auto gx = parent_grad(node, 0);
                         for (std::size_t i = 0; i < b; ++i)
                             for (std::size_t j = 0; j < k; ++j) {
                                 const std::size_t src = (i * m + saved[i * k + j]) * d;
                                 const std::size_t dst = (i * k + j) * d;
                                 for (std::size_t c = 0; c < d; ++c) gx[src + c] += node.grad[dst + c];
                             }
                     });
}

#define TMAE_INSTANTIATE(T)                                                                    \
    template Tensor<T> reshape(const Tensor<T>&, Shape);                                       \
    template Tensor<T> permute(const Tensor<T>&, const std::vector<std::size_t>&);             \
    template Tensor<T> transpose(const Tensor<T>&, std::size_t, std::size_t);                  \
    template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);                     \
    template Tensor<T> slice(const Tensor<T>&, std::size_t, std::size_t, std::size_t);         \
    template Tensor<T> gather_rows(const Tensor<T>&, std::span<const std::size_t>, std::size_t);

TMAE_INSTANTIATE(float)
TMAE_INSTANTIATE(double)

}  // namespace tmae
