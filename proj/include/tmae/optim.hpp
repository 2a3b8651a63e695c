#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tmae/layers.hpp"

namespace tmae {

struct AdamWOptions {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.05;
};

/// Bias-corrected Adam with decoupled weight decay on parameters flagged `decay`.
/// Only the parameters handed to the constructor get state or updates.
template <typename T>
class AdamW {
   public:
    AdamW() = default;
    AdamW(ParamList<T> params, AdamWOptions options = {});

    /// One update at learning rate lr. Parameters without a gradient are skipped.
    /// A non-finite gradient throws TrainingError before anything changes.
    void step(double lr);
    void zero_grad();

    std::uint64_t steps() const { return step_; }
    const ParamList<T>& params() const { return params_; }
    const AdamWOptions& options() const { return options_; }

    // Moment buffers, exposed for checkpointing.
    std::vector<std::vector<T>>& first_moments() { return m_; }
    std::vector<std::vector<T>>& second_moments() { return v_; }
    void set_steps(std::uint64_t s) { step_ = s; }

   private:
    ParamList<T> params_;
    AdamWOptions options_;
    std::vector<std::vector<T>> m_, v_;
    std::uint64_t step_ = 0;
};

/// (base - min) * (1 - iter/total)^power + min; iter must lie in [0, total].
double poly_lr(std::size_t iter, std::size_t total, double base_lr, double min_lr = 0.0, double power = 1.0);

/// Inverse-frequency weights total / (K * count_c), clamped to [0.1, 10].
/// Empty classes get 10. Throws DataError when every count is zero.
std::vector<double> compute_class_weights(std::span<const std::uint64_t> histogram);

}  // namespace tmae
