#include "internal.hpp"
#include "tmae/ops.hpp"
#include "tmae/parallel.hpp"

namespace tmae {

using detail::gemm;
using detail::parent_data;
using detail::parent_grad;
using detail::record;

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    const bool batched = a.dim() == 3;
    if (!((a.dim() == 2 && b.dim() == 2) || (a.dim() == 3 && b.dim() == 3)) ||
        a.shape()[a.dim() - 1] != b.shape()[b.dim() - 2] ||
        (batched && a.size(0) != b.size(0)))
        throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) + " . " +
                             shape_str(b.shape()));
    const std::size_t batch = batched ? a.size(0) : 1;
    const std::size_t m = a.shape()[a.dim() - 2];
    const std::size_t k = a.shape()[a.dim() - 1];
    const std::size_t n = b.shape()[b.dim() - 1];
    std::vector<T> out(batch * m * n);
    const T* av = a.data().data();
    const T* bv = b.data().data();
    parallel_for(batch, [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
            gemm(av + i * m * k, false, bv + i * k * n, false, out.data() + i * m * n, m, n, k, false);
    });
    Shape shape = batched ? Shape{batch, m, n} : Shape{m, n};
    return record<T>(std::move(shape), std::move(out), {a, b}, "matmul",
                     [batch, m, k, n](TensorNode<T>& node) {
                         auto ga = parent_grad(node, 0);
                         auto gb = parent_grad(node, 1);
                         const T* av = parent_data(node, 0).data();
                         const T* bv = parent_data(node, 1).data();
                         const T* g = node.grad.data();
                         parallel_for(batch, [&](std::size_t lo, std::size_t hi) {
                             for (std::size_t i = lo; i < hi; ++i) {
                                 // dA = dC . B^T, dB = A^T . dC
                                 if (!ga.empty())
                                     gemm(g + i * m * n, false, bv + i * k * n, true, ga.data() + i * m * k,
                                          m, k, n, true);
                                 if (!gb.empty())
                                     gemm(av + i * m * k, true, g + i * m * n, false, gb.data() + i * k * n,
                                          k, n, m, true);
                             }
                         });
                     });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    if (w.dim() != 2 || x.shape().back() != w.size(0) ||
        (bias.defined() && (bias.dim() != 1 || bias.size(0) != w.size(1))))
        throw DimensionError("linear shape mismatch: x " + shape_str(x.shape()) + ", w " +
                             shape_str(w.shape()) +
                             (bias.defined() ? ", b " + shape_str(bias.shape()) : std::string()));
    const std::size_t in = w.size(0), outd = w.size(1);
    const std::size_t rows = x.numel() / in;
    std::vector<T> out(rows * outd);
    gemm(x.data().data(), false, w.data().data(), false, out.data(), rows, outd, in, false);
    if (bias.defined()) {
        const auto bv = bias.data();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < outd; ++c) out[r * outd + c] += bv[c];
    }
    Shape shape = x.shape();
    shape.back() = outd;
    return record<T>(std::move(shape), std::move(out), {x, w, bias}, "linear",
                     [rows, in, outd](TensorNode<T>& node) {
                         auto gx = parent_grad(node, 0);
                         auto gw = parent_grad(node, 1);
                         auto gbias = parent_grad(node, 2);
                         const T* g = node.grad.data();
                         if (!gx.empty())
                             gemm(g, false, parent_data(node, 1).data(), true, gx.data(), rows, in, outd, true);
                         if (!gw.empty())
                             gemm(parent_data(node, 0).data(), true, g, false, gw.data(), in, outd, rows, true);
                         if (!gbias.empty()) {
                             std::vector<double> acc(outd, 0.0);
                             for (std::size_t r = 0; r < rows; ++r)
                                 for (std::size_t c = 0; c < outd; ++c) acc[c] += g[r * outd + c];
                             for (std::size_t c = 0; c < outd; ++c) gbias[c] += static_cast<T>(acc[c]);
                         }
                     });
}

template Tensor<float> matmul(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> matmul(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> linear(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> linear(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&);

}  // namespace tmae
