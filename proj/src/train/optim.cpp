#include "tmae/optim.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tmae/error.hpp"

namespace tmae {

template <typename T>
AdamW<T>::AdamW(ParamList<T> params, AdamWOptions options) : params_(std::move(params)), options_(options) {
    for (const auto& p : params_) {
        m_.emplace_back(p.tensor.numel(), T(0));
        v_.emplace_back(p.tensor.numel(), T(0));
    }
}

template <typename T>
void AdamW<T>::step(double lr) {
    for (const auto& p : params_) {
        if (!p.tensor.has_grad()) continue;
        for (T g : p.tensor.grad())
            if (!std::isfinite(static_cast<double>(g)))
                throw TrainingError("non-finite gradient in parameter " + p.name);
    }
    ++step_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.tensor.has_grad()) continue;
        auto w = p.tensor.mutable_data();
        auto g = p.tensor.grad();
        auto& m = m_[i];
        auto& v = v_[i];
        const bool decay = p.decay && options_.weight_decay != 0.0;
        for (std::size_t j = 0; j < w.size(); ++j) {
            const double gj = g[j];
            const double mj = b1 * m[j] + (1.0 - b1) * gj;
            const double vj = b2 * v[j] + (1.0 - b2) * gj * gj;
            m[j] = static_cast<T>(mj);
            v[j] = static_cast<T>(vj);
            double pj = w[j];
            const double update = lr * (mj / c1) / (std::sqrt(vj / c2) + options_.eps);
            if (decay)
                pj = pj - lr * options_.weight_decay * pj - update;
            else
                pj = pj - update;
            w[j] = static_cast<T>(pj);
        }
    }
}

template <typename T>
void AdamW<T>::zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
}

double poly_lr(std::size_t iter, std::size_t total, double base_lr, double min_lr, double power) {
    if (total == 0 || iter > total)
        throw ContractError("poly_lr: iteration " + std::to_string(iter) + " outside [0, " +
                            std::to_string(total) + "]");
    const double frac = 1.0 - static_cast<double>(iter) / static_cast<double>(total);
    return (base_lr - min_lr) * std::pow(frac, power) + min_lr;
}

std::vector<double> compute_class_weights(std::span<const std::uint64_t> histogram) {
    std::uint64_t total = 0;
    for (auto c : histogram) total += c;
    if (total == 0) throw DataError("class histogram is empty");
    const double k = static_cast<double>(histogram.size());
    std::vector<double> out;
    out.reserve(histogram.size());
    for (auto c : histogram) {
        if (c == 0) {
            out.push_back(10.0);
            continue;
        }
        out.push_back(std::clamp(static_cast<double>(total) / (k * static_cast<double>(c)), 0.1, 10.0));
    }
    return out;
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace tmae
