#include "tmae/tensor.hpp"

#include <sstream>
#include <unordered_set>
#include <utility>

#include "tmae/error.hpp"

namespace tmae {

namespace {
thread_local bool t_grad_enabled = true;
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<T>(n, value), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
    for (auto e : shape)
        if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    if (shape_numel(shape) != values.size())
        throw DimensionError("shape " + shape_str(shape) + " does not hold " +
                             std::to_string(values.size()) + " values");
    auto node = std::make_shared<TensorNode<T>>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

template <typename T>
Tensor<T> Tensor<T>::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.normal() * stddev);
    return from(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return from(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
T Tensor<T>::item() const {
    if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
    if (index.size() != dim()) throw DimensionError("index rank mismatch for " + shape_str(shape()));
    std::size_t off = 0;
    std::size_t axis = 0;
    for (auto i : index) {
        if (i >= node_->shape[axis]) throw DimensionError("index out of range for " + shape_str(shape()));
        off = off * node_->shape[axis] + i;
        ++axis;
    }
    return node_->data[off];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
    return from(shape(), node_->data, false);
}

template <typename T>
void Tensor<T>::backward() const {
    if (!defined() || numel() != 1)
        throw ContractError("backward() needs a single-element loss, got " +
                            (defined() ? shape_str(shape()) : std::string("undefined")));
    if (!node_->requires_grad) return;

    // Iterative post-order DFS gives a topological order (inputs first).
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (p && p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    if (node_->grad.empty()) node_->grad.assign(1, T(0));
    node_->grad[0] += T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
    }
    // Consume the graph: interior nodes drop their rules and inputs.
    for (Node* n : order) {
        if (n->backward_fn) {
            n->backward_fn = nullptr;
            n->parents.clear();
        }
    }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace tmae
