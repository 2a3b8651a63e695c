#include <limits>

#include "doctest.h"

#include "../support/model_grad_cases.hpp"

using namespace tmae;

TEST_CASE("composite blocks pass finite-difference checks") {
    Rng rng(404);
    for (const auto& c : testing::model_grad_cases()) {
        for (int instance = 0; instance < 10; ++instance) {
            auto r = c.run(rng);
            INFO(c.name << ": " << r.worst);
            CHECK(r.max_rel_error < 1e-4);
        }
    }
}

TEST_CASE("gradcheck rejects a wrong gradient and flags kinks") {
    Rng rng(5);
    auto x = testing::rnd_away_from_zero({3, 4}, rng);
    auto wrong = testing::gradcheck({x}, [&] { return sum(mul(x, x.detach())); }, rng);
    CHECK(wrong.max_rel_error > 0.4);
    CHECK(wrong.unstable == 0);

    // Exactly on the kink every step size sees slope 1/2, so it is a plain failure.
    auto on_kink = Tensor<double>::zeros({8}, true);
    auto exact = testing::gradcheck({on_kink}, [&] { return sum(relu(on_kink)); }, rng, 8);
    CHECK(exact.unstable == 0);
    CHECK(exact.max_rel_error >= 0.5);

    // Within one step of the kink the estimate moves with h.
    auto near_kink = Tensor<double>::full({8}, 3e-7, true);
    auto near = testing::gradcheck({near_kink}, [&] { return sum(relu(near_kink)); }, rng, 8);
    CHECK(near.unstable == 8);
    CHECK(near.max_rel_error == std::numeric_limits<double>::infinity());
}
