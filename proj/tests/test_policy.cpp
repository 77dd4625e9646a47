#include <cmath>

#include "doctest.h"
#include "mvla/policy.hpp"
#include "support.hpp"

using namespace mvla;
using namespace mvla::testing;

namespace {

PolicyConfig tiny_grammar_config() {
    PolicyConfig c;
    c.feature_dim = 2;
    c.embed_dim = 1;
    c.hidden_dim = 1;
    c.max_length = 24;
    c.init_scale = 0.8;
    return c;
}

}  // namespace

TEST_CASE("grammar vocabulary") {
    const ActionRegistry reg;
    const Vocabulary v = Vocabulary::response_grammar(reg, {});
    CHECK(v.size() <= Vocabulary::kMaxSize);
    CHECK(v.surface(v.eos()).empty());
    for (const auto& label : reg.labels()) {
        CHECK(v.find(label).has_value());
    }
    const std::string raw = serialize(think_phrase(Maneuver::forward), {0.5, -0.25, 1.0, "move"});
    const auto tokens = v.tokenize(raw);
    REQUIRE(tokens);
    CHECK(tokens->back() == v.eos());
    CHECK(v.detokenize(*tokens) == raw);
    CHECK(tokens->size() <= PolicyConfig{}.max_length);
    CHECK_FALSE(v.tokenize("<think>?</think>").has_value());
    CHECK(v.digest() == Vocabulary::response_grammar(reg, {}).digest());
    CHECK_THROWS_AS(Vocabulary({"a", "a", ""}, 2), std::invalid_argument);
}

TEST_CASE("default config stays small") {
    const Vocabulary v = Vocabulary::response_grammar(ActionRegistry(), {});
    const PolicyParams p(PolicyConfig{}, v.size());
    CHECK(p.size() <= 20000);
    CHECK(tiny_grammar_config().feature_dim == 2);
    CHECK(PolicyParams(tiny_grammar_config(), v.size()).size() <= 200);
}

TEST_CASE("distribution basics") {
    const Vocabulary v = toy_vocabulary();
    PolicyParams zero(toy_config(), v.size());
    Rng rng(1);
    const auto ctx = random_context(3, rng);
    const auto d = token_distribution(zero, ctx, std::vector<TokenId>{1, 2});
    for (double x : d) {
        CHECK(x == doctest::Approx(1.0 / 5.0).epsilon(1e-14));
    }
    const std::vector<TokenId> seven{1, 2, 3, 4, 1, 2, 0};
    PolicyConfig long_cfg = toy_config();
    long_cfg.max_length = 8;
    CHECK(sequence_logprob(PolicyParams(long_cfg, 5), ctx, seven) == doctest::Approx(7 * std::log(0.2)));
    CHECK(sequence_logprob(zero, ctx, {}) == 0.0);

    const PolicyParams p = PolicyParams::random(toy_config(), v.size(), 3);
    for (int trial = 0; trial < 20; ++trial) {
        const auto prefix = random_sequence(rng.below(5), 5, rng);
        const auto q = token_distribution(p, ctx, prefix);
        double s = 0.0;
        for (double x : q) {
            CHECK(x >= 0.0);
            s += x;
        }
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("network matches the straight-line reference") {
    Rng rng(9);
    for (int seed = 0; seed < 10; ++seed) {
        const PolicyParams p = PolicyParams::random(toy_config(), 5, seed);
        const auto ctx = random_context(3, rng);
        const auto seq = random_sequence(6, 5, rng);
        std::vector<std::vector<double>> ref;
        const double lp = reference_logprob(p, ctx, seq, &ref);
        CHECK(std::abs(lp - sequence_logprob(p, ctx, seq)) < 1e-12);
        for (std::size_t t = 0; t < seq.size(); ++t) {
            const auto d = token_distribution(p, ctx, std::span(seq).first(t));
            for (std::size_t k = 0; k < 5; ++k) {
                CHECK(std::abs(d[k] - ref[t][k]) < 1e-12);
            }
        }
    }
}

TEST_CASE("bias probe moves only its token") {
    const PolicyParams p = PolicyParams::random(toy_config(), 5, 4);
    Rng rng(2);
    const auto ctx = random_context(3, rng);
    const std::vector<TokenId> prefix{2};
    const auto before = token_distribution(p, ctx, prefix);
    PolicyParams q = p;
    q.at(q.output_bias(), 0, 3) += 0.3;
    const auto after = token_distribution(q, ctx, prefix);
    CHECK(after[3] > before[3]);
    // Every other token keeps its relative odds.
    for (std::size_t k = 0; k < 5; ++k) {
        if (k != 3) {
            CHECK(after[k] < before[k]);
            CHECK(after[k] / after[0 == k ? 1 : 0] == doctest::Approx(before[k] / before[0 == k ? 1 : 0]));
        }
    }
}

TEST_CASE("softmax shift invariance") {
    PolicyParams p = PolicyParams::random(toy_config(), 5, 8);
    Rng rng(4);
    const auto ctx = random_context(3, rng);
    const auto before = token_distribution(p, ctx, std::vector<TokenId>{1});
    for (std::size_t k = 0; k < 5; ++k) {
        p.at(p.output_bias(), 0, k) += 7.5;
    }
    const auto after = token_distribution(p, ctx, std::vector<TokenId>{1});
    for (std::size_t k = 0; k < 5; ++k) {
        CHECK(std::abs(before[k] - after[k]) < 1e-14);
    }
}

TEST_CASE("sampling is deterministic and consistent with scoring") {
    const Vocabulary v = Vocabulary::response_grammar(ActionRegistry(), {});
    const PolicyParams p = PolicyParams::random(PolicyConfig{}, v.size(), 5);
    Rng rng(6);
    const auto ctx = random_context(13, rng);
    const auto a = sample_group(p, v, ctx, 8, 17);
    const auto b = sample_group(p, v, ctx, 8, 17);
    CHECK(a == b);
    REQUIRE(a.size() == 8);
    for (const auto& r : a) {
        CHECK(r.logprob <= 0.0);
        CHECK(r.tokens.size() <= 24);
        CHECK(r.text == v.detokenize(r.tokens));
        CHECK(std::abs(sequence_logprob(p, ctx, r.tokens) - r.logprob) < 1e-10);
    }
    CHECK(sample_group(p, v, ctx, 8, 18) != a);
}

TEST_CASE("saturated policy samples identical responses") {
    const Vocabulary v = toy_vocabulary();
    PolicyParams p(toy_config(), v.size());
    // Bias toward "a" after the start symbol, eos after anything else, via the
    // embedding path into the output layer.
    const std::size_t H = toy_config().hidden_dim;
    p.at(p.token_embedding(), v.size(), 0) = 1.0;
    for (TokenId t = 0; t < v.size(); ++t) {
        p.at(p.token_embedding(), t, 1) = 1.0;
    }
    p.at(p.output_weights(), H + 0, 1) = 60.0;
    p.at(p.output_weights(), H + 1, 0) = 60.0;
    Rng rng(0);
    const auto group = sample_group(p, v, random_context(3, rng), 8, 3);
    for (const auto& r : group) {
        CHECK(r.text == "a");
        CHECK(r.tokens == group[0].tokens);
    }
}

TEST_CASE("logprob gradient matches finite differences") {
    const Vocabulary v = Vocabulary::response_grammar(ActionRegistry(), {});
    const auto tokens = *v.tokenize(serialize(think_phrase(Maneuver::turn_left), {0.0, 0.0, 0.7, "move"}));
    Rng rng(12);
    for (int seed = 0; seed < 5; ++seed) {
        const PolicyParams p = PolicyParams::random(tiny_grammar_config(), v.size(), seed);
        REQUIRE(p.size() <= 200);
        const auto ctx = random_context(2, rng);
        PolicyParams g(p.config(), p.vocab_size());
        accumulate_logprob_gradient(p, ctx, tokens, 1.0, g);
        const double err = max_relative_fd_error(
            p, [&](const PolicyParams& q) { return reference_logprob(q, ctx, tokens); }, g);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("objective_gradient") {
    const PolicyParams p = PolicyParams::random(toy_config(), 5, 1);
    const PolicyParams g = objective_gradient(p, [](const PolicyParams&, PolicyParams*) { return 3.0; });
    CHECK(g.norm() == 0.0);
    double value = 0.0;
    Rng rng(1);
    const auto ctx = random_context(3, rng);
    const std::vector<TokenId> seq{1, 2, 0};
    const PolicyParams g2 = objective_gradient(
        p,
        [&](const PolicyParams& q, PolicyParams* grad) {
            return grad ? accumulate_logprob_gradient(q, ctx, seq, 1.0, *grad) : sequence_logprob(q, ctx, seq);
        },
        &value);
    CHECK(value == doctest::Approx(sequence_logprob(p, ctx, seq)));
    CHECK(max_relative_fd_error(p, [&](const PolicyParams& q) { return sequence_logprob(q, ctx, seq); }, g2) < 1e-4);
    CHECK_THROWS_AS(objective_gradient(p, [](const PolicyParams&, PolicyParams*) { return std::nan(""); }),
                    NonFiniteError);
}

TEST_CASE("input validation") {
    const PolicyParams p = PolicyParams::random(toy_config(), 5, 1);
    CHECK_THROWS_AS(token_distribution(p, ObservationContext{{1.0}}, {}), std::invalid_argument);
    Rng rng(1);
    const auto ctx = random_context(3, rng);
    CHECK_THROWS_AS(token_distribution(p, ctx, std::vector<TokenId>(6, 1)), std::invalid_argument);
    CHECK_THROWS_AS(sequence_logprob(p, ctx, std::vector<TokenId>{9}), std::invalid_argument);
    PolicyConfig bad = toy_config();
    bad.hidden_dim = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}
