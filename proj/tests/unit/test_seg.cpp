#include <cmath>
#include <cstring>

#include "doctest.h"
#include "tmae/error.hpp"
#include "tmae/ops.hpp"
#include "tmae/seg.hpp"

using namespace tmae;
using F = Tensor<float>;
using D = Tensor<double>;

namespace {

ModelConfig head_config(std::size_t image, std::size_t patch) {
    auto c = ModelConfig::tiny();
    c.image_size = image;
    c.patch_size = patch;
    c.embed_dim = 8;
    c.encoder_heads = 2;
    c.head_width = 4;
    c.n_classes = 3;
    return c;
}

std::vector<F> random_taps(const ModelConfig& c, std::size_t batch, Rng& rng) {
    std::vector<F> taps;
    for (int i = 0; i < 4; ++i) taps.push_back(F::randn({batch, c.n_tokens(), c.embed_dim}, rng));
    return taps;
}

bool all_zero(std::span<const double> g) {
    for (double v : g)
        if (v != 0.0) return false;
    return true;
}

}  // namespace

TEST_CASE("pyramid levels sit at strides 4, 8, 16 and 32") {
    Rng rng(1);
    for (auto [image, patch, expect] : {std::tuple{224, 16, std::array<std::size_t, 4>{56, 28, 14, 7}},
                                        std::tuple{32, 4, std::array<std::size_t, 4>{32, 16, 8, 4}}}) {
        auto c = head_config(image, patch);
        UperNetHead<float> head(c, rng);
        auto pyr = head.pyramid(random_taps(c, 1, rng), c.grid(), c.grid());
        for (std::size_t l = 0; l < 4; ++l) {
            CHECK(pyr.levels[l].size(1) == c.embed_dim);
            CHECK(pyr.levels[l].size(2) == expect[l]);
            CHECK(pyr.levels[l].size(3) == expect[l]);
        }
    }
}

TEST_CASE("tokens map onto the grid row by row") {
    Rng rng(2);
    auto tokens = F::randn({2, 6, 5}, rng);
    auto map = tokens_to_map(tokens, 2, 3);
    CHECK(map.shape() == Shape{2, 5, 2, 3});
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t d = 0; d < 5; ++d)
            for (std::size_t i = 0; i < 2; ++i)
                for (std::size_t j = 0; j < 3; ++j) CHECK(map.at({b, d, i, j}) == tokens.at({b, i * 3 + j, d}));
    CHECK_THROWS_AS(tokens_to_map(tokens, 2, 2), DimensionError);
}

TEST_CASE("pyramid rejects a grid that does not match the taps") {
    Rng rng(3);
    auto c = head_config(32, 4);
    UperNetHead<float> head(c, rng);
    CHECK_THROWS_AS(head.pyramid(random_taps(c, 1, rng), 4, 4), DimensionError);
    auto three = random_taps(c, 1, rng);
    three.pop_back();
    CHECK_THROWS(head.pyramid(three, 8, 8));

    auto two_taps = c;
    two_taps.encoder_blocks = 2;
    two_taps.tap_blocks = {0, 1};
    CHECK_THROWS_AS(UperNetHead<float>(two_taps, rng), ConfigError);
}

TEST_CASE("pooling a constant or a ramp") {
    auto constant = F::full({1, 2, 6, 6}, 3.5f);
    for (std::size_t s : UperNetHead<float>::pool_scales) {
        auto pooled = adaptive_avg_pool2d(constant, s, s);
        CHECK(pooled.shape() == Shape{1, 2, s, s});
        for (float v : pooled.data()) CHECK(v == doctest::Approx(3.5f));
    }

    std::vector<float> ramp(16);
    for (std::size_t i = 0; i < 16; ++i) ramp[i] = static_cast<float>(i);
    auto q = adaptive_avg_pool2d(F::from({1, 1, 4, 4}, ramp), 2, 2);
    // Quadrant means of 0..15 laid out row-major.
    const float expect[4] = {(0 + 1 + 4 + 5) / 4.f, (2 + 3 + 6 + 7) / 4.f, (8 + 9 + 12 + 13) / 4.f,
                             (10 + 11 + 14 + 15) / 4.f};
    for (std::size_t i = 0; i < 4; ++i) CHECK(q.data()[i] == doctest::Approx(expect[i]));
}

TEST_CASE("ppm keeps the spatial size and outputs head width channels") {
    Rng rng(4);
    auto c = head_config(32, 4);
    UperNetHead<float> head(c, rng);
    for (std::size_t s : {1, 3, 4, 7}) {
        auto out = head.ppm(F::randn({2, c.embed_dim, s, s}, rng));
        CHECK(out.shape() == Shape{2, c.head_width, s, s});
    }
}

TEST_CASE("fused map is at stride 4 with head width channels") {
    Rng rng(5);
    for (auto [image, patch] : {std::pair{32, 4}, std::pair{48, 8}, std::pair{64, 16}}) {
        auto c = head_config(image, patch);
        UperNetHead<float> head(c, rng);
        auto pyr = head.pyramid(random_taps(c, 2, rng), c.grid(), c.grid());
        pyr.levels[3] = head.ppm(pyr.levels[3]);
        auto fused = head.fpn_fuse(pyr);
        CHECK(fused.shape() == Shape{2, c.head_width, c.grid() * 4, c.grid() * 4});
    }
}

TEST_CASE("a single open lateral is the only path from its level") {
    auto c = head_config(32, 4);
    for (std::size_t open = 0; open < 3; ++open) {
        Rng rng(6 + open);
        UperNetHead<double> head(c, rng);
        for (std::size_t l = 0; l < 3; ++l)
            if (l != open) zero_tensors<double>({head.lateral[l].weight, head.lateral[l].bias});
        FeaturePyramid<double> pyr;
        const std::size_t sizes[4] = {32, 16, 8, 4};
        for (std::size_t l = 0; l < 3; ++l) pyr.levels[l] = D::randn({1, c.embed_dim, sizes[l], sizes[l]}, rng, 1, true);
        pyr.levels[3] = D::randn({1, c.head_width, 4, 4}, rng, 1, true);
        auto fused = head.fpn_fuse(pyr);
        sum(mul(fused, D::randn(fused.shape(), rng))).backward();
        for (std::size_t l = 0; l < 3; ++l) {
            INFO("open " << open << " level " << l);
            if (l == open) {
                REQUIRE(pyr.levels[l].has_grad());
                CHECK_FALSE(all_zero(pyr.levels[l].grad()));
            } else {
                CHECK((!pyr.levels[l].has_grad() || all_zero(pyr.levels[l].grad())));
            }
        }
    }
}

TEST_CASE("classifier output is at input resolution") {
    Rng rng(9);
    auto c = head_config(32, 4);
    c.n_classes = 2;
    UperNetHead<float> head(c, rng);
    auto logits = head(random_taps(c, 3, rng), 8, 8, 32, 32);
    CHECK(logits.shape() == Shape{3, 2, 32, 32});

    auto paper = head_config(224, 16);
    paper.n_classes = 2;
    UperNetHead<float> big(paper, rng);
    CHECK(big(random_taps(paper, 1, rng), 14, 14, 224, 224).shape() == Shape{1, 2, 224, 224});

    zero_tensors<float>({head.classifier.weight});
    for (auto& v : head.classifier.bias.mutable_data()) v = 0.25f;
    auto flat = head.classify(F::randn({1, c.head_width, 8, 8}, rng), 32, 32);
    for (float v : flat.data()) CHECK(v == 0.25f);

    auto constant = bilinear_resize(F::full({1, 1, 8, 8}, -1.5f), 32, 32);
    for (float v : constant.data()) CHECK(v == doctest::Approx(-1.5f));
}

TEST_CASE("argmax breaks ties toward the lower class") {
    auto logits = F::from({1, 3, 1, 2}, {0.5f, 1.0f, 0.5f, 2.0f, 0.1f, 2.0f});
    CHECK(argmax_channels(logits) == std::vector<std::uint8_t>{0, 1});
}

TEST_CASE("head is deterministic") {
    Rng rng(10);
    auto c = head_config(32, 4);
    UperNetHead<float> head(c, rng);
    auto taps = random_taps(c, 2, rng);
    auto a = head(taps, 8, 8, 32, 32), b = head(taps, 8, 8, 32, 32);
    CHECK(std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0);
}

TEST_CASE("unet shapes, extents and skips") {
    Rng rng(11);
    UNet<float> net(1, 2, 4, rng);
    for (std::size_t s : {16, 32, 48}) {
        auto out = net(F::randn({2, 1, s, s}, rng));
        CHECK(out.shape() == Shape{2, 2, s, s});
    }
    CHECK_THROWS_AS(net(F::randn({1, 1, 20, 20}, rng)), DimensionError);
    CHECK_THROWS_AS(net(F::randn({1, 1, 16, 24}, rng)), DimensionError);
    CHECK_THROWS(net(F::randn({1, 3, 16, 16}, rng)));

    auto x = F::randn({1, 1, 32, 32}, rng);
    auto with = net(x);
    net.use_skips = false;
    auto without = net(x);
    double diff = 0;
    for (std::size_t i = 0; i < with.numel(); ++i) diff += std::abs(with.data()[i] - without.data()[i]);
    CHECK(diff > 0);

    UNet<float> tiny(1, 2, 16, rng);
    std::vector<std::size_t> widths;
    for (const auto& p : tiny.params())
        for (int level = 0; level < 4; ++level)
            if (p.name == "unet.down." + std::to_string(level) + ".0.weight") widths.push_back(p.tensor.size(0));
    CHECK(widths == std::vector<std::size_t>{16, 32, 64, 128});
}
