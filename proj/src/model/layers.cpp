#include "tmae/layers.hpp"

#include <algorithm>
#include <cmath>

#include "tmae/error.hpp"
#include "tmae/ops.hpp"

namespace tmae {

template <typename T>
Linear<T>::Linear(std::size_t in, std::size_t out, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    weight = Tensor<T>::uniform({in, out}, rng, -limit, limit, true);
    bias = Tensor<T>::zeros({out}, true);
}

template <typename T>
Tensor<T> Linear<T>::operator()(const Tensor<T>& x) const {
    return linear(x, weight, bias);
}

template <typename T>
void Linear<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, false});
}

template <typename T>
LayerNorm<T>::LayerNorm(std::size_t dim)
    : gamma(Tensor<T>::full({dim}, T(1), true)), beta(Tensor<T>::zeros({dim}, true)) {}

template <typename T>
Tensor<T> LayerNorm<T>::operator()(const Tensor<T>& x) const {
    return layer_norm(x, gamma, beta, eps);
}

template <typename T>
void LayerNorm<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma, false});
    out.push_back({prefix + ".beta", beta, false});
}

template <typename T>
Conv2d<T>::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_,
                  std::size_t pad_, Rng& rng)
    : stride(stride_), pad(pad_) {
    // He-normal for ReLU stacks.
    const double std = std::sqrt(2.0 / static_cast<double>(in * kernel * kernel));
    weight = Tensor<T>::randn({out, in, kernel, kernel}, rng, std, true);
    bias = Tensor<T>::zeros({out}, true);
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
    return conv2d(x, weight, bias, stride, pad);
}

template <typename T>
void Conv2d<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, false});
}

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_,
                                    Rng& rng)
    : stride(stride_) {
    const double std = std::sqrt(2.0 / static_cast<double>(in));
    weight = Tensor<T>::randn({in, out, kernel, kernel}, rng, std, true);
    bias = Tensor<T>::zeros({out}, true);
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::operator()(const Tensor<T>& x) const {
    return conv_transpose2d(x, weight, bias, stride, 0);
}

template <typename T>
void ConvTranspose2d<T>::collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight, true});
    out.push_back({prefix + ".bias", bias, false});
}

template <typename T>
std::vector<std::vector<T>> snapshot(const ParamList<T>& params) {
    std::vector<std::vector<T>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
    return out;
}

template <typename T>
void restore(ParamList<T>& params, const std::vector<std::vector<T>>& values) {
    if (values.size() != params.size()) throw ContractError("restore: parameter count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto dst = params[i].tensor.mutable_data();
        if (dst.size() != values[i].size())
            throw ContractError("restore: size mismatch for " + params[i].name);
        std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
}

template <typename T>
void zero_tensors(std::initializer_list<Tensor<T>> tensors) {
    for (auto t : tensors) std::fill(t.mutable_data().begin(), t.mutable_data().end(), T(0));
}

#define TMAE_INSTANTIATE(T)                                                                  \
    template struct Linear<T>;                                                               \
    template struct LayerNorm<T>;                                                            \
    template struct Conv2d<T>;                                                               \
    template struct ConvTranspose2d<T>;                                                      \
    template std::vector<std::vector<T>> snapshot(const ParamList<T>&);                      \
    template void restore(ParamList<T>&, const std::vector<std::vector<T>>&);                \
    template void zero_tensors(std::initializer_list<Tensor<T>>);

TMAE_INSTANTIATE(float)
TMAE_INSTANTIATE(double)

}  // namespace tmae
