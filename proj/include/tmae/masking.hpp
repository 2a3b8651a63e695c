#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tmae/rng.hpp"

namespace tmae {

/// Which tokens the encoder sees and how to put the sequence back together.
///
/// keep_ids and mask_ids are each ascending and together partition
/// 0..n_tokens-1. For the concatenation [kept tokens..., mask tokens...],
/// element restore_perm[i] is token i.
struct MaskPlan {
    std::size_t n_tokens = 0;
    std::vector<std::size_t> keep_ids;
    std::vector<std::size_t> mask_ids;
    std::vector<std::size_t> restore_perm;

    /// Builds the plan (and restore permutation) from an explicit kept set.
    static MaskPlan from_keep(std::size_t n_tokens, std::vector<std::size_t> keep_ids);
};

/// Number of tokens left visible: floor(n * (1 - ratio)).
std::size_t kept_count(std::size_t n_tokens, double mask_ratio);

/// Uniform random subset of floor(n (1 - ratio)) visible tokens.
/// Throws ConfigError when the ratio is outside (0,1), n < 2, or nothing is kept.
MaskPlan random_mask(std::size_t n_tokens, double mask_ratio, Rng& rng);

/// Per-image plans for a batch; image i draws from Rng::derive(seed, step, i).
std::vector<MaskPlan> batch_masks(std::size_t batch, std::size_t n_tokens, double mask_ratio,
                                  std::uint64_t seed, std::uint64_t step);

}  // namespace tmae
