#pragma once

#include <string>
#include <vector>

#include "tmae/rng.hpp"
#include "tmae/tensor.hpp"

namespace tmae {

/// A learnable tensor and whether decoupled weight decay applies to it.
template <typename T>
struct NamedParam {
    std::string name;
    Tensor<T> tensor;
    bool decay = false;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
void append(ParamList<T>& out, const ParamList<T>& more) {
    out.insert(out.end(), more.begin(), more.end());
}

/// y = x W + b over the last axis; W is [in x out].
template <typename T>
struct Linear {
    Tensor<T> weight;
    Tensor<T> bias;

    Linear() = default;
    Linear(std::size_t in, std::size_t out, Rng& rng);  // Xavier-uniform weight, zero bias

    Tensor<T> operator()(const Tensor<T>& x) const;
    void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct LayerNorm {
    Tensor<T> gamma;
    Tensor<T> beta;
    double eps = 1e-6;

    LayerNorm() = default;
    explicit LayerNorm(std::size_t dim);

    Tensor<T> operator()(const Tensor<T>& x) const;
    void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct Conv2d {
    Tensor<T> weight;  // [out x in x k x k]
    Tensor<T> bias;
    std::size_t stride = 1;
    std::size_t pad = 0;

    Conv2d() = default;
    Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad, Rng& rng);

    Tensor<T> operator()(const Tensor<T>& x) const;
    void collect(ParamList<T>& out, const std::string& prefix) const;
};

template <typename T>
struct ConvTranspose2d {
    Tensor<T> weight;  // [in x out x k x k]
    Tensor<T> bias;
    std::size_t stride = 2;

    ConvTranspose2d() = default;
    ConvTranspose2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, Rng& rng);

    Tensor<T> operator()(const Tensor<T>& x) const;
    void collect(ParamList<T>& out, const std::string& prefix) const;
};

/// Copies parameter values out (e.g. to snapshot the best checkpoint).
template <typename T>
std::vector<std::vector<T>> snapshot(const ParamList<T>& params);

template <typename T>
void restore(ParamList<T>& params, const std::vector<std::vector<T>>& values);

/// Sets every entry of the listed tensors to zero.
template <typename T>
void zero_tensors(std::initializer_list<Tensor<T>> tensors);

}  // namespace tmae
