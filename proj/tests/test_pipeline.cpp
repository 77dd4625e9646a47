#include <map>

#include "doctest.h"
#include "mvla/pipeline.hpp"

using namespace mvla;
using namespace mvla::pipeline;

TEST_CASE("context pool") {
    const env::EnvConfig cfg;
    const auto suite = env::make_arena_suite(3, 4, env::Difficulty::medium, cfg);
    const ContextPool pool(suite, cfg, ActionRegistry(), 1);
    REQUIRE(pool.size() > 0);
    std::map<std::string, int> labels;
    for (std::size_t i = 0; i < pool.size(); ++i) {
        const auto& c = pool.at(i);
        CHECK(c.observation.features.size() == env::kFeatureDim);
        CHECK(is_valid_command(c.target, ActionRegistry(), cfg.limits()));
        ++labels[c.target.action];
    }
    CHECK(labels.count("stop") == 1);
    CHECK(labels.count("move") == 1);
    const auto s = pool.sampler();
    CHECK(s(5).target == s(5).target);
    CHECK(s(5).observation.features == pool.sample(5).observation.features);
    const ContextPool again(suite, cfg, ActionRegistry(), 1);
    CHECK(again.size() == pool.size());

    // Label balancing lifts the rare stop contexts above their raw share.
    ContextPoolConfig flat;
    flat.balance_fraction = 0.0;
    ContextPoolConfig balanced;
    balanced.balance_fraction = 1.0;
    const ContextPool p0(suite, cfg, ActionRegistry(), 1, flat);
    const ContextPool p1(suite, cfg, ActionRegistry(), 1, balanced);
    int stop0 = 0, stop1 = 0;
    for (std::uint64_t k = 0; k < 2000; ++k) {
        stop0 += p0.sample(k).target.action == "stop";
        stop1 += p1.sample(k).target.action == "stop";
    }
    CHECK(stop1 > stop0);
}

TEST_CASE("reward fn") {
    const auto fn = make_reward_fn(RewardWeights{}, ActionRegistry(), {});
    const ControlCommand gt{0.5, 0, 0, "move"};
    CHECK(fn(serialize("go", gt), gt).total == 3.0);
    CHECK(fn("nope", gt).total == 0.0);
}

TEST_CASE("evaluation") {
    const env::EnvConfig cfg;
    const ActionRegistry reg;
    const auto suite = env::make_arena_suite(4, 5, env::Difficulty::easy, cfg);
    const auto oracle = evaluate_oracle(suite, cfg, reg);
    CHECK(oracle.reports.size() == 5);
    CHECK(oracle.summary.overall.sr == 1.0);
    CHECK(oracle.summary.overall.ndtw == doctest::Approx(1.0));
    const Vocabulary v = Vocabulary::response_grammar(reg, cfg.limits());
    const auto p = PolicyParams::random(PolicyConfig{}, v.size(), 2);
    const auto a = evaluate_policy(p, v, suite, cfg, reg, 8);
    const auto b = evaluate_policy(p, v, suite, cfg, reg, 8);
    CHECK(a.traces == b.traces);
    CHECK(metrics::format_table(a.summary) == metrics::format_table(b.summary));
}
