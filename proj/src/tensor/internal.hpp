#pragma once

// Helpers shared by the op implementations. Not installed.

#include <Eigen/Core>

#include <span>
#include <string>
#include <vector>

#include "tmae/error.hpp"
#include "tmae/tensor.hpp"

namespace tmae::detail {

template <typename T>
using GradFn = std::function<void(TensorNode<T>&)>;

/// Builds an op output and, when any input needs a gradient and recording
/// is enabled, attaches the inputs and the gradient rule.
template <typename T>
Tensor<T> record(Shape shape, std::vector<T> data, std::initializer_list<Tensor<T>> inputs,
                 const char* op, GradFn<T> fn) {
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& in : inputs)
            if (in.defined() && in.requires_grad()) needs = true;
    }
    if (needs) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->parents.push_back(in.defined() ? in.node_ptr() : nullptr);
        node->backward_fn = std::move(fn);
    }
    return Tensor<T>(std::move(node));
}

template <typename T>
Tensor<T> record(Shape shape, std::vector<T> data, const std::vector<Tensor<T>>& inputs,
                 const char* op, GradFn<T> fn) {
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    node->op = op;
    bool needs = false;
    if (grad_enabled()) {
        for (const auto& in : inputs)
            if (in.defined() && in.requires_grad()) needs = true;
    }
    if (needs) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->parents.push_back(in.node_ptr());
        node->backward_fn = std::move(fn);
    }
    return Tensor<T>(std::move(node));
}

/// Gradient buffer of parent i, allocated on first use; empty when that
/// parent does not take a gradient.
template <typename T>
std::span<T> parent_grad(TensorNode<T>& out, std::size_t i) {
    auto& p = out.parents[i];
    if (!p || !p->requires_grad) return {};
    if (p->grad.empty()) p->grad.assign(p->data.size(), T(0));
    return p->grad;
}

template <typename T>
std::span<const T> parent_data(const TensorNode<T>& out, std::size_t i) {
    return out.parents[i]->data;
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw DimensionError(msg);
}

/// C (+)= op(A) * op(B); A is M x K (K x M when ta), B is K x N (N x K when tb).
template <typename T>
void gemm(const T* a, bool ta, const T* b, bool tb, T* c, std::size_t m, std::size_t n,
          std::size_t k, bool accumulate) {
    using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    using CMap = Eigen::Map<const Mat>;
    const auto M = static_cast<Eigen::Index>(m);
    const auto N = static_cast<Eigen::Index>(n);
    const auto K = static_cast<Eigen::Index>(k);
    Eigen::Map<Mat> C(c, M, N);
    if (!accumulate) C.setZero();
    if (m == 0 || n == 0 || k == 0) return;
    if (!ta && !tb)
        C.noalias() += CMap(a, M, K) * CMap(b, K, N);
    else if (ta && !tb)
        C.noalias() += CMap(a, K, M).transpose() * CMap(b, K, N);
    else if (!ta && tb)
        C.noalias() += CMap(a, M, K) * CMap(b, N, K).transpose();
    else
        C.noalias() += CMap(a, K, M).transpose() * CMap(b, N, K).transpose();
}

}  // namespace tmae::detail
