#pragma once

// Glue between the environment, the data engine and the trainers.

#include <cstdint>
#include <span>
#include <vector>

#include "mvla/grpo.hpp"
#include "mvla/metrics.hpp"
#include "mvla/nav_env.hpp"
#include "mvla/reward.hpp"

namespace mvla::pipeline {

struct ContextPoolConfig {
    // Fraction of oracle states that also contribute a perturbed copy.
    double perturb_fraction = 0.5;
    double position_noise = 0.5;
    double yaw_noise = 0.5;
    // Probability of first drawing the oracle action label uniformly; the
    // remaining draws are uniform over contexts.
    double balance_fraction = 0.3;
};

// GRPO training contexts: observations along oracle trajectories (and
// perturbed neighbours) labelled with the oracle command.
class ContextPool {
  public:
    ContextPool(std::span<const env::Arena> arenas, const env::EnvConfig& config, const ActionRegistry& registry,
                std::uint64_t seed, const ContextPoolConfig& pool_config = {});

    std::size_t size() const { return contexts_.size(); }
    const grpo::TrainingContext& at(std::size_t i) const { return contexts_.at(i); }
    // Uniform draw keyed by seed.
    const grpo::TrainingContext& sample(std::uint64_t seed) const;
    grpo::ContextSampler sampler() const;

  private:
    std::vector<grpo::TrainingContext> contexts_;
    std::vector<std::vector<std::size_t>> classes_;  // one bucket per target label
    double balance_ = 0.3;
};

grpo::RewardFn make_reward_fn(const RewardWeights& weights, const ActionRegistry& registry,
                              const VelocityLimits& limits);

struct Evaluation {
    std::vector<metrics::MetricReport> reports;
    std::vector<env::EpisodeTrace> traces;
    metrics::Summary summary;
};

// Rolls out every arena with the source produced for it; episode k uses
// derive_seed(seed, k). References are oracle trajectories.
using SourceFactory = std::function<env::ResponseSource(const env::Navigator&)>;
Evaluation evaluate(const SourceFactory& factory, std::span<const env::Arena> arenas, const env::EnvConfig& config,
                    const ActionRegistry& registry, const metrics::MetricConfig& metric_config, std::uint64_t seed);

Evaluation evaluate_policy(const PolicyParams& params, const Vocabulary& vocab, std::span<const env::Arena> arenas,
                           const env::EnvConfig& config, const ActionRegistry& registry, std::uint64_t seed);
Evaluation evaluate_oracle(std::span<const env::Arena> arenas, const env::EnvConfig& config,
                           const ActionRegistry& registry);

// Mean composite reward of every executed response against the oracle
// command for the state it was issued in.
double closed_loop_reward(const Evaluation& evaluation, std::span<const env::Arena> arenas,
                          const env::EnvConfig& config, const grpo::RewardFn& reward_fn);

struct SuiteSpec {
    std::size_t easy = 0;
    std::size_t medium = 0;
    std::size_t hard = 0;

    std::size_t count(env::Difficulty d) const;
    std::size_t total() const { return easy + medium + hard; }
    bool operator==(const SuiteSpec&) const = default;
};

// Concatenation of make_arena_suite(seed, count, tier) over the tiers.
std::vector<env::Arena> make_suite(std::uint64_t seed, const SuiteSpec& spec, const env::EnvConfig& config);
// The first `spec.count(tier)` arenas of each tier of `arenas`.
std::vector<env::Arena> head_per_tier(std::span<const env::Arena> arenas, const SuiteSpec& spec);

// Reward masks in ablation-table order; the first row is the SFT-only baseline.
struct RewardMask {
    bool movement = false;
    bool action = false;
    bool format = false;

    RewardWeights weights(const RewardWeights& base) const;
    bool empty() const { return !movement && !action && !format; }
    bool full() const { return movement && action && format; }
};
const std::vector<RewardMask>& ablation_masks();

struct AblationRow {
    RewardMask mask;
    Evaluation evaluation;
};

struct AblationSetup {
    const PolicyParams* sft_params = nullptr;  // also the KL reference
    const Vocabulary* vocab = nullptr;
    const ContextPool* pool = nullptr;
    std::span<const env::Arena> eval_arenas;
    env::EnvConfig env;
    ActionRegistry registry;
    grpo::GrpoConfig grpo;
    RewardWeights base_weights;
    std::uint64_t train_seed = 0;
    std::uint64_t rollout_seed = 0;
};

// One GRPO run per non-empty mask, all from the SFT params with the same
// train seed; the empty mask evaluates the SFT params directly.
using AblationCallback = std::function<void(const AblationRow&)>;
std::vector<AblationRow> run_ablation(const AblationSetup& setup, const AblationCallback& on_row = {});

}  // namespace mvla::pipeline
