#include "mvla/pipeline.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "mvla/rng.hpp"

namespace mvla::pipeline {

ContextPool::ContextPool(std::span<const env::Arena> arenas, const env::EnvConfig& config,
                         const ActionRegistry& registry, std::uint64_t seed, const ContextPoolConfig& pool_config)
    : balance_(pool_config.balance_fraction) {
    std::map<std::string, std::vector<std::size_t>> buckets;
    for (std::size_t k = 0; k < arenas.size(); ++k) {
        const env::Arena& arena = arenas[k];
        const env::Navigator nav(arena, config);
        const env::EpisodeTrace trace = env::rollout(nav, env::oracle_source(nav), registry, 0);
        Rng rng(derive_seed(seed, k));
        for (std::size_t i = 0; i < trace.commands.size(); ++i) {
            const env::AgentState& s = trace.states[i];
            contexts_.push_back({nav.observe(s), nav.oracle(s).command});
            if (!rng.bernoulli(pool_config.perturb_fraction)) {
                continue;
            }
            env::AgentState p = s;
            p.x += rng.normal(0.0, pool_config.position_noise);
            p.y += rng.normal(0.0, pool_config.position_noise);
            p.yaw = env::wrap_angle(p.yaw + rng.normal(0.0, pool_config.yaw_noise));
            if (!arena.in_free_space(p.position())) {
                continue;
            }
            contexts_.push_back({nav.observe(p), nav.oracle(p).command});
        }
    }
    if (contexts_.empty()) {
        throw std::invalid_argument("context pool is empty");
    }
    for (std::size_t i = 0; i < contexts_.size(); ++i) {
        buckets[contexts_[i].target.action].push_back(i);
    }
    for (auto& [label, members] : buckets) {
        classes_.push_back(std::move(members));
    }
}

const grpo::TrainingContext& ContextPool::sample(std::uint64_t seed) const {
    Rng rng(seed);
    if (!rng.bernoulli(balance_)) {
        return contexts_[rng.below(contexts_.size())];
    }
    const auto& bucket = classes_[rng.below(classes_.size())];
    return contexts_[bucket[rng.below(bucket.size())]];
}

grpo::ContextSampler ContextPool::sampler() const {
    return [this](std::uint64_t seed) { return sample(seed); };
}

grpo::RewardFn make_reward_fn(const RewardWeights& weights, const ActionRegistry& registry,
                              const VelocityLimits& limits) {
    return [weights, registry, limits](const std::string& text, const ControlCommand& target) {
        return composite_reward(text, target, weights, registry, limits);
    };
}

Evaluation evaluate(const SourceFactory& factory, std::span<const env::Arena> arenas, const env::EnvConfig& config,
                    const ActionRegistry& registry, const metrics::MetricConfig& metric_config, std::uint64_t seed) {
    if (arenas.empty()) {
        throw std::invalid_argument("evaluation suite is empty");
    }
    Evaluation out;
    for (std::size_t k = 0; k < arenas.size(); ++k) {
        const env::Navigator nav(arenas[k], config);
        const env::EpisodeTrace reference = env::rollout(nav, env::oracle_source(nav), registry, 0);
        env::EpisodeTrace trace = env::rollout(nav, factory(nav), registry, derive_seed(seed, k));
        const std::vector<env::Vec2> ref_points = reference.positions();
        out.reports.push_back(metrics::evaluate_episode(trace, arenas[k], ref_points, metric_config));
        out.traces.push_back(std::move(trace));
    }
    out.summary = metrics::aggregate(out.reports);
    return out;
}

Evaluation evaluate_policy(const PolicyParams& params, const Vocabulary& vocab, std::span<const env::Arena> arenas,
                           const env::EnvConfig& config, const ActionRegistry& registry, std::uint64_t seed) {
    const env::ResponseSource source = env::policy_source(params, vocab);
    metrics::MetricConfig mc;
    mc.success_radius = config.success_radius;
    return evaluate([&](const env::Navigator&) { return source; }, arenas, config, registry, mc, seed);
}

Evaluation evaluate_oracle(std::span<const env::Arena> arenas, const env::EnvConfig& config,
                           const ActionRegistry& registry) {
    metrics::MetricConfig mc;
    mc.success_radius = config.success_radius;
    return evaluate([](const env::Navigator& nav) { return env::oracle_source(nav); }, arenas, config, registry, mc,
                    0);
}

double closed_loop_reward(const Evaluation& evaluation, std::span<const env::Arena> arenas,
                          const env::EnvConfig& config, const grpo::RewardFn& reward_fn) {
    if (evaluation.traces.size() != arenas.size()) {
        throw std::invalid_argument("evaluation does not match the arena list");
    }
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < arenas.size(); ++i) {
        const env::Navigator nav(arenas[i], config);
        const auto& trace = evaluation.traces[i];
        for (std::size_t k = 0; k < trace.raw_responses.size(); ++k) {
            total += reward_fn(trace.raw_responses[k], nav.oracle(trace.states[k]).command).total;
            ++n;
        }
    }
    return n == 0 ? 0.0 : total / static_cast<double>(n);
}

std::size_t SuiteSpec::count(env::Difficulty d) const {
    switch (d) {
        case env::Difficulty::easy: return easy;
        case env::Difficulty::medium: return medium;
        case env::Difficulty::hard: return hard;
    }
    return 0;
}

std::vector<env::Arena> make_suite(std::uint64_t seed, const SuiteSpec& spec, const env::EnvConfig& config) {
    std::vector<env::Arena> out;
    for (env::Difficulty d : {env::Difficulty::easy, env::Difficulty::medium, env::Difficulty::hard}) {
        if (spec.count(d) > 0) {
            auto tier = env::make_arena_suite(seed, spec.count(d), d, config);
            out.insert(out.end(), tier.begin(), tier.end());
        }
    }
    return out;
}

std::vector<env::Arena> head_per_tier(std::span<const env::Arena> arenas, const SuiteSpec& spec) {
    std::map<env::Difficulty, std::size_t> taken;
    std::vector<env::Arena> out;
    for (const auto& a : arenas) {
        if (taken[a.difficulty] < spec.count(a.difficulty)) {
            ++taken[a.difficulty];
            out.push_back(a);
        }
    }
    return out;
}

RewardWeights RewardMask::weights(const RewardWeights& base) const {
    return {movement ? base.movement : 0.0, action ? base.action : 0.0, format ? base.format : 0.0};
}

const std::vector<RewardMask>& ablation_masks() {
    static const std::vector<RewardMask> masks = {
        {false, false, false}, {true, false, false}, {false, true, false}, {false, false, true},
        {true, true, false},   {true, false, true},  {false, true, true},  {true, true, true},
    };
    return masks;
}

std::vector<AblationRow> run_ablation(const AblationSetup& setup, const AblationCallback& on_row) {
    if (!setup.sft_params || !setup.vocab || !setup.pool) {
        throw std::invalid_argument("ablation setup is incomplete");
    }
    setup.grpo.validate();
    std::vector<AblationRow> rows;
    for (const RewardMask& mask : ablation_masks()) {
        PolicyParams params = *setup.sft_params;
        if (!mask.empty()) {
            const auto reward_fn = make_reward_fn(mask.weights(setup.base_weights), setup.registry, setup.env.limits());
            params = grpo::train_grpo(params, *setup.sft_params, *setup.vocab, setup.pool->sampler(), reward_fn,
                                      setup.grpo, setup.train_seed);
        }
        rows.push_back({mask, evaluate_policy(params, *setup.vocab, setup.eval_arenas, setup.env, setup.registry,
                                              setup.rollout_seed)});
        if (on_row) {
            on_row(rows.back());
        }
    }
    return rows;
}

}  // namespace mvla::pipeline
