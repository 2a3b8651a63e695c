#include "tmae/masking.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tmae/error.hpp"

namespace tmae {

MaskPlan MaskPlan::from_keep(std::size_t n_tokens, std::vector<std::size_t> keep_ids) {
    MaskPlan plan;
    plan.n_tokens = n_tokens;
    std::sort(keep_ids.begin(), keep_ids.end());
    std::vector<bool> kept(n_tokens, false);
    for (auto id : keep_ids) {
        if (id >= n_tokens || kept[id]) throw ContractError("mask plan: invalid or repeated kept id");
        kept[id] = true;
    }
    plan.keep_ids = std::move(keep_ids);
    for (std::size_t i = 0; i < n_tokens; ++i)
        if (!kept[i]) plan.mask_ids.push_back(i);
    plan.restore_perm.assign(n_tokens, 0);
    for (std::size_t j = 0; j < plan.keep_ids.size(); ++j) plan.restore_perm[plan.keep_ids[j]] = j;
    for (std::size_t j = 0; j < plan.mask_ids.size(); ++j)
        plan.restore_perm[plan.mask_ids[j]] = plan.keep_ids.size() + j;
    return plan;
}

std::size_t kept_count(std::size_t n_tokens, double mask_ratio) {
    // The small slack keeps exact products (196 * 0.25 = 49) from rounding down.
    return static_cast<std::size_t>(std::floor(static_cast<double>(n_tokens) * (1.0 - mask_ratio) + 1e-9));
}

MaskPlan random_mask(std::size_t n_tokens, double mask_ratio, Rng& rng) {
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0))
        throw ConfigError("mask ratio must lie strictly between 0 and 1");
    if (n_tokens < 2) throw ConfigError("masking needs at least 2 tokens");
    const std::size_t keep = kept_count(n_tokens, mask_ratio);
    if (keep == 0)
        throw ConfigError("mask ratio " + std::to_string(mask_ratio) + " keeps no token out of " +
                          std::to_string(n_tokens));
    auto perm = rng.permutation(n_tokens);
    perm.resize(keep);
    return MaskPlan::from_keep(n_tokens, std::move(perm));
}

std::vector<MaskPlan> batch_masks(std::size_t batch, std::size_t n_tokens, double mask_ratio,
                                  std::uint64_t seed, std::uint64_t step) {
    std::vector<MaskPlan> plans;
    plans.reserve(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        Rng rng = Rng::derive(seed, step, i);
        plans.push_back(random_mask(n_tokens, mask_ratio, rng));
    }
    return plans;
}

}  // namespace tmae
