#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tmae/rng.hpp"

namespace tmae {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Gradient recording is on by default; NoGradGuard turns it off for the
/// current thread (evaluation, frozen backbones, optimizer updates).
bool grad_enabled();

class NoGradGuard {
   public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

   private:
    bool previous_;
};

template <typename T>
struct TensorNode {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a backward pass touches this node
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;
};

/// Dense row-major array handle with reverse-mode differentiation.
///
/// Copies share storage. Operation outputs are never written after their
/// producing op returns; parameters are mutated in place by the optimizer
/// only between steps.
template <typename T>
class Tensor {
   public:
    using value_type = T;
    using Node = TensorNode<T>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false);
    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false) {
        return from({1}, {value}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim() const { return node_->shape.size(); }
    std::size_t size(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t numel() const { return node_->data.size(); }

    std::span<const T> data() const { return node_->data; }
    /// Raw write access; only valid on leaves outside a recorded step.
    std::span<T> mutable_data() { return node_->data; }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on) {
        node_->requires_grad = on;
        return *this;
    }

    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    /// Same values, no history, no gradient requirement.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    /// Reverse pass from a single-element tensor.
    void backward() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

    template <typename U>
    Tensor<U> cast() const {
        std::vector<U> out(numel());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<U>(node_->data[i]);
        return Tensor<U>::from(shape(), std::move(out));
    }

   private:
    std::shared_ptr<Node> node_;
};

template <typename T>
void backward(const Tensor<T>& loss) {
    loss.backward();
}

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace tmae
