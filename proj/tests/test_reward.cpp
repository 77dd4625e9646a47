#include <cmath>
#include <stdexcept>

#include "doctest.h"
#include "mvla/reward.hpp"
#include "mvla/rng.hpp"

using namespace mvla;

TEST_CASE("movement reward examples") {
    CHECK(movement_reward({1, 0, 0}, {1, 0, 0}) == 1.0);
    CHECK(movement_reward({1, 0, 0}, {0, 1, 0}) == 0.0);
    CHECK(movement_reward({0.5, 0, 0}, {-1, 0, 0}) == -1.0);
    CHECK(movement_reward({0, 0, 0}, {0, 0, 0}) == 1.0);
    CHECK(movement_reward({0, 0, 0}, {1, 0, 0}) == 0.0);
    CHECK(movement_reward({1e-10, 0, 0}, {0, 0, 0}) == 1.0);
    CHECK(movement_reward({0, 2e-9, 0}, {0, 0, 0}) == 0.0);
}

TEST_CASE("movement reward properties") {
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const VelocityTriple u{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const VelocityTriple v{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
        const double a = rng.uniform(0.01, 100), b = rng.uniform(0.01, 100);
        const double r = movement_reward(u, v);
        CHECK(r >= -1.0);
        CHECK(r <= 1.0);
        CHECK(std::abs(r - movement_reward({a * u.vx, a * u.vy, a * u.wyaw}, {b * v.vx, b * v.vy, b * v.wyaw})) < 1e-12);
        CHECK(r == movement_reward(v, u));
        CHECK(std::abs(movement_reward(u, u) - 1.0) < 1e-12);
        // Direct formula.
        const double dot = u.vx * v.vx + u.vy * v.vy + u.wyaw * v.wyaw;
        const double nu = std::sqrt(u.vx * u.vx + u.vy * u.vy + u.wyaw * u.wyaw);
        const double nv = std::sqrt(v.vx * v.vx + v.vy * v.vy + v.wyaw * v.wyaw);
        CHECK(std::abs(r - dot / (nu * nv)) < 1e-12);
    }
}

TEST_CASE("action and format rewards") {
    CHECK(action_reward("move", "move") == 1.0);
    CHECK(action_reward("move", "stop") == 0.0);
    CHECK(action_reward("stop", "stop") == 1.0);
    CHECK(format_reward("<think>a</think><answer>vx=0 vy=0 wyaw=0 action=stop</answer>") == 1.0);
    CHECK(format_reward("<answer>vx=0 vy=0 wyaw=0 action=stop</answer><think>a</think>") == 0.0);
    CHECK(format_reward("") == 0.0);
}

TEST_CASE("composite reward examples") {
    const ActionRegistry reg;
    const VelocityLimits lim;
    const RewardWeights w;
    const ControlCommand gt{0.5, 0.0, 0.2, "move"};
    const auto full = composite_reward(serialize("x", gt), gt, w, reg, lim);
    CHECK(full.movement == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(full.action == 1.0);
    CHECK(full.format == 1.0);
    CHECK(full.total == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(composite_reward("<think>x</think>", gt, w, reg, lim) == RewardBreakdown{0, 0, 0, 0});
    const auto r = composite_reward(serialize("x", {0.0, 0.7, 0.0, "stop"}), {0.7, 0.0, 0.0, "move"}, w, reg, lim);
    CHECK(r == RewardBreakdown{0, 0, 1, 1});
    const RewardWeights w2{2.0, 0.5, 0.25};
    const auto r2 = composite_reward(serialize("x", gt), gt, w2, reg, lim);
    CHECK(r2.total == doctest::Approx(2.75).epsilon(1e-15));
    // Gating holds under any weights.
    CHECK(composite_reward("junk", gt, w2, reg, lim).total == 0.0);
}

TEST_CASE("weights validation") {
    CHECK_NOTHROW(RewardWeights{}.validate());
    CHECK_NOTHROW((RewardWeights{0, 0, 1}.validate()));
    CHECK_THROWS_AS((RewardWeights{0, 0, 0}.validate()), std::invalid_argument);
    CHECK_THROWS_AS((RewardWeights{-1, 1, 1}.validate()), std::invalid_argument);
}
