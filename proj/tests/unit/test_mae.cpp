#include <cmath>
#include <cstring>
#include <set>

#include "doctest.h"
#include "../support/fixtures.hpp"
#include "tmae/error.hpp"
#include "tmae/mae.hpp"
#include "tmae/masking.hpp"
#include "tmae/ops.hpp"

using namespace tmae;
using F = Tensor<float>;

namespace {

void check_partition(const MaskPlan& plan) {
    std::vector<int> seen(plan.n_tokens, 0);
    for (auto i : plan.keep_ids) ++seen.at(i);
    for (auto i : plan.mask_ids) ++seen.at(i);
    for (int c : seen) REQUIRE(c == 1);
    REQUIRE(std::is_sorted(plan.keep_ids.begin(), plan.keep_ids.end()));
    REQUIRE(std::is_sorted(plan.mask_ids.begin(), plan.mask_ids.end()));
    std::set<std::size_t> perm(plan.restore_perm.begin(), plan.restore_perm.end());
    REQUIRE(perm.size() == plan.n_tokens);
    REQUIRE(*perm.rbegin() == plan.n_tokens - 1);
}

ModelConfig small_mae() {
    auto c = ModelConfig::tiny();
    c.image_size = 16;
    c.embed_dim = 16;
    c.encoder_blocks = 2;
    c.encoder_heads = 2;
    c.decoder_dim = 8;
    c.decoder_blocks = 1;
    c.decoder_heads = 2;
    c.tap_blocks = {0, 1};
    return c;
}

std::vector<std::vector<float>> values_of(const ParamList<float>& params) { return snapshot(params); }

}  // namespace

TEST_CASE("random_mask counts") {
    Rng rng(1);
    auto p = random_mask(196, 0.75, rng);
    CHECK(p.keep_ids.size() == 49);
    CHECK(p.mask_ids.size() == 147);
    check_partition(p);

    auto q = random_mask(4, 0.75, rng);
    CHECK(q.keep_ids.size() == 1);
    CHECK(q.mask_ids.size() == 3);

    CHECK(kept_count(196, 0.75) == 49);
    CHECK(kept_count(10, 0.75) == 2);
    CHECK(kept_count(7, 0.5) == 3);
}

TEST_CASE("random_mask rejects degenerate settings") {
    Rng rng(2);
    CHECK_THROWS_AS(random_mask(3, 0.75, rng), ConfigError);
    CHECK_THROWS_AS(random_mask(1, 0.5, rng), ConfigError);
    CHECK_THROWS_AS(random_mask(10, 0.0, rng), ConfigError);
    CHECK_THROWS_AS(random_mask(10, 1.0, rng), ConfigError);
    CHECK_THROWS_AS(random_mask(10, -0.2, rng), ConfigError);
}

TEST_CASE("masking partition holds across a sweep") {
    Rng rng(3);
    for (std::size_t n = 2; n <= 64; ++n)
        for (double ratio : {0.05, 0.25, 0.5, 0.6, 0.75, 0.9, 0.95}) {
            const auto keep = static_cast<std::size_t>(std::floor(static_cast<double>(n) * (1.0 - ratio) + 1e-9));
            if (keep == 0) {
                CHECK_THROWS_AS(random_mask(n, ratio, rng), ConfigError);
                continue;
            }
            auto p = random_mask(n, ratio, rng);
            CHECK(p.keep_ids.size() == keep);
            check_partition(p);
        }
}

TEST_CASE("masking is deterministic per seed and independent per image") {
    Rng a(11), b(11);
    CHECK(random_mask(50, 0.75, a).keep_ids == random_mask(50, 0.75, b).keep_ids);

    auto plans = batch_masks(8, 64, 0.75, 5, 0);
    auto again = batch_masks(8, 64, 0.75, 5, 0);
    auto next = batch_masks(8, 64, 0.75, 5, 1);
    std::set<std::vector<std::size_t>> distinct;
    for (std::size_t i = 0; i < plans.size(); ++i) {
        CHECK(plans[i].keep_ids == again[i].keep_ids);
        distinct.insert(plans[i].keep_ids);
    }
    CHECK(distinct.size() == 8);
    CHECK(plans[0].keep_ids != next[0].keep_ids);
}

TEST_CASE("each token is masked three quarters of the time") {
    Rng rng(12);
    std::vector<int> masked(8, 0);
    const int draws = 10000;
    for (int d = 0; d < draws; ++d)
        for (auto i : random_mask(8, 0.75, rng).mask_ids) ++masked[i];
    for (int m : masked) CHECK(std::abs(m / static_cast<double>(draws) - 0.75) <= 0.02);
}

TEST_CASE("restore permutation puts every token back") {
    Rng rng(13);
    for (int rep = 0; rep < 20; ++rep) {
        const std::size_t n = 2 + rng.below(60);
        auto plan = random_mask(n, 0.3 + 0.6 * rng.uniform(), rng);
        if (plan.keep_ids.empty()) continue;
        auto x = F::randn({1, n, 3}, rng);
        std::vector<std::size_t> order = plan.keep_ids;
        order.insert(order.end(), plan.mask_ids.begin(), plan.mask_ids.end());
        auto shuffled = gather_rows(x, order, n);
        auto back = gather_rows(shuffled, plan.restore_perm, n);
        CHECK(std::memcmp(back.data().data(), x.data().data(), x.numel() * sizeof(float)) == 0);
    }
    auto p = MaskPlan::from_keep(5, {1, 3});
    CHECK(p.mask_ids == std::vector<std::size_t>{0, 2, 4});
    CHECK(p.restore_perm == std::vector<std::size_t>{2, 0, 3, 1, 4});
}

TEST_CASE("reconstruction loss examples") {
    Rng rng(14);
    auto target = F::randn({2, 4, 3}, rng);
    std::vector<MaskPlan> plans{MaskPlan::from_keep(4, {0}), MaskPlan::from_keep(4, {2})};
    CHECK(reconstruction_loss(target, target, plans).item() == 0.0f);
    CHECK(reconstruction_loss(add_scalar(target, 1.0), target, plans).item() == doctest::Approx(1.0).epsilon(1e-6));

    // One of the six masked rows is off by 2 everywhere.
    auto pred = target.detach();
    for (std::size_t j = 0; j < 3; ++j) pred.mutable_data()[1 * 3 + j] += 2.0f;
    CHECK(reconstruction_loss(pred, target, plans).item() == doctest::Approx(4.0 / 6.0).epsilon(1e-6));

    std::vector<MaskPlan> none{MaskPlan::from_keep(4, {0, 1, 2, 3}), MaskPlan::from_keep(4, {0, 1, 2, 3})};
    CHECK_THROWS_AS(reconstruction_loss(target, target, none), ContractError);
    std::vector<MaskPlan> uneven{MaskPlan::from_keep(4, {0}), MaskPlan::from_keep(4, {2, 3})};
    CHECK_THROWS_AS(reconstruction_loss(target, target, uneven), ContractError);
    CHECK_THROWS(reconstruction_loss(F::zeros({2, 4, 2}), target, plans));
}

TEST_CASE("reconstruction loss ignores kept positions bit-exactly") {
    Rng rng(15);
    for (int rep = 0; rep < 100; ++rep) {
        const std::size_t b = 1 + rng.below(3), n = 4 + rng.below(30), l = 1 + rng.below(8);
        auto pred = F::randn({b, n, l}, rng);
        auto target = F::randn({b, n, l}, rng);
        auto plans = batch_masks(b, n, 0.75, rng.next_u64(), rep);
        const bool norm = rep % 2 == 1;
        const float before = reconstruction_loss(pred, target, plans, norm).item();
        auto perturbed = pred.detach();
        for (std::size_t i = 0; i < b; ++i)
            for (auto k : plans[i].keep_ids)
                for (std::size_t j = 0; j < l; ++j)
                    perturbed.mutable_data()[(i * n + k) * l + j] = static_cast<float>(rng.normal() * 1e3);
        const float after = reconstruction_loss(perturbed, target, plans, norm).item();
        CHECK(std::memcmp(&before, &after, sizeof(float)) == 0);
    }
}

TEST_CASE("normalized targets are standardized per patch") {
    auto target = F::from({1, 2, 4}, {1, 2, 3, 4, 10, 10, 10, 10});
    auto plans = std::vector<MaskPlan>{MaskPlan::from_keep(2, {1})};
    // Patch 0 standardized: mean 2.5, var 1.25.
    std::vector<float> z;
    for (float v : {1.f, 2.f, 3.f, 4.f}) z.push_back(static_cast<float>((v - 2.5) / std::sqrt(1.25 + 1e-6)));
    auto pred = F::from({1, 2, 4}, {z[0], z[1], z[2], z[3], 0, 0, 0, 0});
    CHECK(reconstruction_loss(pred, target, plans, true).item() == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(reconstruction_loss(pred, target, plans, false).item() > 1.0f);
}

TEST_CASE("decoder restores the full token count") {
    Rng rng(16);
    auto cfg = small_mae();
    MaeModel<float> mae(cfg, rng);
    const std::size_t n = cfg.n_tokens(), l = cfg.patch_dim();
    for (double ratio : {0.25, 0.5, 0.75, 0.9}) {
        auto plans = batch_masks(2, n, ratio, 3, 0);
        auto latent = F::randn({2, plans[0].keep_ids.size(), cfg.embed_dim}, rng);
        auto out = mae.decode(latent, plans);
        CHECK(out.shape() == Shape{2, n, l});
    }
    std::vector<MaskPlan> all{MaskPlan::from_keep(n, [&] {
        std::vector<std::size_t> ids(n);
        for (std::size_t i = 0; i < n; ++i) ids[i] = i;
        return ids;
    }())};
    CHECK(mae.decode(F::randn({1, n, cfg.embed_dim}, rng), all).shape() == Shape{1, n, l});

    auto plans = batch_masks(2, n, 0.75, 3, 0);
    CHECK_THROWS_AS(mae.decode(F::randn({2, plans[0].keep_ids.size() + 1, cfg.embed_dim}, rng), plans),
                    ContractError);
    CHECK_THROWS_AS(mae.decode(F::randn({3, plans[0].keep_ids.size(), cfg.embed_dim}, rng), plans), ContractError);
}

TEST_CASE("decoder wiring with every token kept") {
    Rng rng(17);
    auto cfg = small_mae();
    MaeModel<double> mae(cfg, rng);
    for (auto& b : mae.decoder_blocks()) b.zero_residual_outputs();
    const std::size_t n = cfg.n_tokens();
    std::vector<std::size_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = i;
    std::vector<MaskPlan> all{MaskPlan::from_keep(n, ids)};
    auto latent = Tensor<double>::randn({1, n, cfg.embed_dim}, rng);
    auto out = mae.decode(latent, all);
    auto ref = mae.decoder_pred()(mae.decoder_norm()(add(mae.decoder_embed()(latent), mae.decoder_pos_table())));
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out.data()[i] == doctest::Approx(ref.data()[i]).epsilon(1e-12));
}

TEST_CASE("mask token receives gradient") {
    Rng rng(18);
    auto cfg = small_mae();
    MaeModel<float> mae(cfg, rng);
    auto images = F::randn({2, 1, cfg.image_size, cfg.image_size}, rng);
    auto plans = batch_masks(2, cfg.n_tokens(), 0.75, 9, 0);
    mae.forward(images, plans).loss.backward();
    REQUIRE(mae.mask_token().has_grad());
    double norm = 0;
    for (float g : mae.mask_token().grad()) norm += std::abs(g);
    CHECK(norm > 0);
}

TEST_CASE("pretrain step with zero learning rate changes nothing") {
    Rng rng(19);
    auto cfg = small_mae();
    MaeModel<float> mae(cfg, rng);
    AdamW<float> opt(mae.params());
    auto images = F::randn({2, 1, cfg.image_size, cfg.image_size}, rng);
    const auto before = values_of(mae.params());
    const double loss = pretrain_step(mae, images, opt, 0.0, 1, 0);
    CHECK(std::isfinite(loss));
    const auto after = values_of(mae.params());
    REQUIRE(before.size() == after.size());
    for (std::size_t i = 0; i < before.size(); ++i)
        CHECK(std::memcmp(before[i].data(), after[i].data(), before[i].size() * sizeof(float)) == 0);
}

TEST_CASE("pretraining on a fixed batch halves the loss") {
    auto samples = testing::scene_samples(8, 7);
    auto images = stack_images<float>(testing::pointers(samples));
    Rng rng(7);
    MaeModel<float> mae(ModelConfig::tiny(), rng);
    AdamW<float> opt(mae.params());
    double first = 0, last = 0;
    for (std::size_t step = 0; step < 200; ++step) {
        last = pretrain_step(mae, images, opt, 1e-3, 7, step);
        REQUIRE(std::isfinite(last));
        if (step == 0) first = last;
    }
    MESSAGE("loss " << first << " -> " << last);
    CHECK(last < 0.5 * first);
}
