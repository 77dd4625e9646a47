#include <cmath>

#include "doctest.h"
#include "mvla/data_engine.hpp"
#include "mvla/grpo.hpp"
#include "mvla/sft.hpp"
#include "support.hpp"

using namespace mvla;
using namespace mvla::sft;
using namespace mvla::testing;

namespace {

const Vocabulary& grammar() {
    static const Vocabulary v = Vocabulary::response_grammar(ActionRegistry(), {});
    return v;
}

// Verified step-level records from oracle rollouts on a small easy suite.
data::DatasetManifest oracle_manifest(std::size_t arenas) {
    const env::EnvConfig cfg;
    const auto suite = env::make_arena_suite(21, arenas, env::Difficulty::easy, cfg);
    const auto episodes = data::collect_oracle_episodes(suite, cfg, ActionRegistry());
    data::MockTeacher teacher(1, 0.0, cfg.limits());
    auto raw = data::synthesize(teacher, episodes, data::Granularity::step);
    return data::filter_dataset(std::move(raw), ActionRegistry(), cfg.limits());
}

SftExample example_of(const std::string& raw) {
    data::CotSample s;
    s.id = "x";
    s.raw = raw;
    s.verified = true;
    Rng rng(3);
    s.observation_digest = data::observation_digest(random_context(13, rng));
    return make_example(s, grammar(), 24);
}

}  // namespace

TEST_CASE("nll basics") {
    const SftExample ex = example_of(serialize(think_phrase(Maneuver::forward), {0.5, 0, 0, "move"}));
    const PolicyParams uniform(PolicyConfig{}, grammar().size());
    std::vector<SftExample> seven(2, ex);
    for (auto& e : seven) {
        e.tokens.resize(7);
    }
    CHECK(nll_loss(uniform, seven) == doctest::Approx(7 * std::log(static_cast<double>(grammar().size()))));
    const PolicyParams p = PolicyParams::random(PolicyConfig{}, grammar().size(), 2);
    CHECK(nll_loss(p, std::span(&ex, 1)) == doctest::Approx(-sequence_logprob(p, ex.context, ex.tokens)));
    CHECK(nll_loss(p, std::span(&ex, 1)) >= 0.0);
}

TEST_CASE("make_example rejects bad records") {
    data::CotSample s;
    s.id = "bad";
    s.raw = "<think>?</think>";
    s.observation_digest = "0";
    CHECK_THROWS_AS(make_example(s, grammar(), 24), std::invalid_argument);
    s.raw = serialize(think_phrase(Maneuver::forward), {0.5, 0, 0, "move"});
    CHECK_THROWS_AS(make_example(s, grammar(), 5), std::invalid_argument);
}

TEST_CASE("nll gradient matches finite differences") {
    PolicyConfig cfg;
    cfg.feature_dim = 2;
    cfg.embed_dim = 1;
    cfg.hidden_dim = 1;
    cfg.init_scale = 0.8;
    Rng rng(4);
    std::vector<SftExample> batch;
    for (Maneuver m : {Maneuver::forward, Maneuver::turn_right, Maneuver::stop}) {
        SftExample e;
        e.context = random_context(2, rng);
        e.tokens = *grammar().tokenize(serialize(think_phrase(m), {0.25, 0, -0.5, "move"}));
        batch.push_back(e);
    }
    for (int seed = 0; seed < 3; ++seed) {
        const PolicyParams p = PolicyParams::random(cfg, grammar().size(), seed);
        REQUIRE(p.size() <= 200);
        PolicyParams g(cfg, p.vocab_size());
        nll_loss(p, batch, &g);
        CHECK(max_relative_fd_error(p, [&](const PolicyParams& q) { return nll_loss(q, batch); }, g) < 1e-4);
    }
}

TEST_CASE("memorizing one example") {
    const SftExample ex = example_of(serialize(think_phrase(Maneuver::turn_left), {0.0, 0.0, 0.8, "move"}));
    const PolicyParams init = PolicyParams::random(PolicyConfig{}, grammar().size(), 6);
    SftConfig cfg;
    cfg.learning_rate = 0.1;
    cfg.epochs = 500;
    cfg.batch_size = 1;
    const double before = nll_loss(init, std::span(&ex, 1));
    const PolicyParams trained = train_sft(init, std::span(&ex, 1), cfg);
    CHECK(nll_loss(trained, std::span(&ex, 1)) < 0.05 * before);
}

TEST_CASE("training on a manifest") {
    const auto manifest = oracle_manifest(4);
    REQUIRE(manifest.accepted().size() >= 50);
    data::DatasetManifest small = manifest;
    small.samples.resize(50);
    const auto examples = make_examples(small.samples, grammar(), 24);
    const PolicyParams init = PolicyParams::random(PolicyConfig{}, grammar().size(), 1);
    SftConfig cfg;
    cfg.epochs = 5;
    cfg.seed = 9;
    std::vector<double> losses;
    const PolicyParams a = train_sft(init, small, grammar(), cfg, [&](const EpochReport& r) { losses.push_back(r.mean_loss); });
    CHECK(losses.size() == 5);
    CHECK(nll_loss(a, examples) < nll_loss(init, examples));
    CHECK(train_sft(init, small, grammar(), cfg) == a);
    cfg.seed = 10;
    CHECK_FALSE(train_sft(init, small, grammar(), cfg) == a);
    cfg.learning_rate = 0.0;
    CHECK(train_sft(init, small, grammar(), cfg) == init);
}

TEST_CASE("manifest preconditions") {
    const PolicyParams init = PolicyParams::random(PolicyConfig{}, grammar().size(), 1);
    data::DatasetManifest empty;
    CHECK_THROWS(train_sft(init, empty, grammar(), SftConfig{}));
    auto m = oracle_manifest(1);
    m.samples[0].verified = false;
    CHECK_THROWS(train_sft(init, m, grammar(), SftConfig{}));
    SftConfig bad;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("frozen reference") {
    PolicyParams p = PolicyParams::random(PolicyConfig{}, grammar().size(), 3);
    const PolicyParams original = p;
    const ReferencePolicy ref = freeze_reference(p);
    p.data()[0] += 1.0;
    CHECK(ref.params() == original);
    Rng rng(1);
    const auto ctx = random_context(13, rng);
    const auto d = token_distribution(ref.params(), ctx, {});
    CHECK(grpo::categorical_kl(d, d) == 0.0);
    PolicyParams bad = original;
    bad.data()[1] = std::nan("");
    CHECK_THROWS_AS(freeze_reference(bad), NonFiniteError);
}

TEST_CASE("reference survives grpo training") {
    const Vocabulary v = toy_vocabulary();
    const PolicyParams init = PolicyParams::random(toy_config(), v.size(), 2);
    const ReferencePolicy ref = freeze_reference(init);
    const std::vector<double> bytes(ref.params().data().begin(), ref.params().data().end());
    grpo::GrpoConfig cfg;
    cfg.max_updates = 100;
    cfg.learning_rate = 0.3;
    const auto sampler = [](std::uint64_t) { return grpo::TrainingContext{ObservationContext{{0.5, 0.0, -0.5}}, {}}; };
    const auto reward = [](const std::string& text, const ControlCommand&) {
        RewardBreakdown r;
        r.total = static_cast<double>(text.size());
        return r;
    };
    std::vector<double> kl;
    const PolicyParams trained = grpo::train_grpo(init, ref.params(), v, sampler, reward, cfg, 4,
                                                  [&](std::size_t, const grpo::UpdateReport& r) { kl.push_back(r.mean_kl); });
    CHECK_FALSE(trained == init);
    CHECK(std::equal(bytes.begin(), bytes.end(), ref.params().data().begin()));
    CHECK(std::abs(kl.front()) < 1e-12);
}
