#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "mvla/policy.hpp"
#include "mvla/reward.hpp"

namespace mvla::grpo {

struct GrpoConfig {
    std::size_t group_size = 8;
    std::size_t samples_per_step = 5;
    double clip_epsilon = 0.2;
    double kl_beta = 0.04;
    double norm_epsilon = 1e-8;
    double learning_rate = 0.02;
    std::size_t max_updates = 1000;
    // Gradient steps per sampling phase; ratios are exactly 1 on the first.
    std::size_t inner_epochs = 1;

    void validate() const;
    bool operator==(const GrpoConfig&) const = default;
};

class RatioOverflowError : public std::overflow_error {
  public:
    using std::overflow_error::overflow_error;
};

inline constexpr double kMaxLogRatio = 80.0;
inline constexpr double kProbabilityFloor = 1e-12;

// A_i = r_i - mean(r), Â_i = A_i / (sigma_A + eps), sigma_A the population
// standard deviation.
std::vector<double> compute_advantages(std::span<const double> rewards, double norm_epsilon);

// exp(new - old); throws RatioOverflowError if |new - old| > 80.
double importance_ratio(double new_logprob, double old_logprob);

// min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)
double clipped_term(double ratio, double advantage, double clip_epsilon);

// D(p || q) with q floored at kProbabilityFloor.
double categorical_kl(std::span<const double> p, std::span<const double> q);
// Sum over steps of categorical KL between matching distribution sequences.
double kl_penalty(std::span<const std::vector<double>> theta_dists, std::span<const std::vector<double>> ref_dists);

struct TrainingContext {
    ObservationContext observation;
    ControlCommand target;
};

struct ResponseGroup {
    ObservationContext context;
    ControlCommand target;
    std::vector<SampledResponse> responses;
    std::vector<RewardBreakdown> rewards;
    std::vector<double> old_logprobs;
    std::vector<double> advantages;
};

struct ObjectiveStats {
    double value = 0.0;
    double mean_kl = 0.0;
    double clip_fraction = 0.0;
    std::size_t responses = 0;
};

// Mean over the group of clipped_term - beta * KL(theta || ref) along each
// realized response. Adds the gradient to *grad when non-null.
double grpo_objective(const ResponseGroup& group, const PolicyParams& params, const PolicyParams& ref_params,
                      const GrpoConfig& config, PolicyParams* grad = nullptr, ObjectiveStats* stats = nullptr);

// Mean of grpo_objective over several groups.
double batch_objective(std::span<const ResponseGroup> groups, const PolicyParams& params,
                       const PolicyParams& ref_params, const GrpoConfig& config, PolicyParams* grad = nullptr,
                       ObjectiveStats* stats = nullptr);

using ContextSampler = std::function<TrainingContext(std::uint64_t seed)>;
using RewardFn = std::function<RewardBreakdown(const std::string& text, const ControlCommand& target)>;

struct UpdateReport {
    double objective_value = 0.0;
    double mean_reward = 0.0;
    double mean_movement = 0.0;
    double mean_action = 0.0;
    double mean_format = 0.0;
    double mean_kl = 0.0;
    double clip_fraction = 0.0;
    double grad_norm = 0.0;
};

struct StepResult {
    PolicyParams params;
    UpdateReport report;
};

// Samples and scores `samples_per_step` groups under a frozen copy of
// `params`, then ascends the batch objective.
std::vector<ResponseGroup> collect_groups(const PolicyParams& params, const Vocabulary& vocab,
                                          const ContextSampler& sampler, const RewardFn& reward_fn,
                                          const GrpoConfig& config, std::uint64_t seed);

StepResult grpo_step(const PolicyParams& params, const PolicyParams& ref_params, const Vocabulary& vocab,
                     const ContextSampler& sampler, const RewardFn& reward_fn, const GrpoConfig& config,
                     std::uint64_t seed);

using StepCallback = std::function<void(std::size_t step, const UpdateReport& report)>;

// Runs max_updates steps; step k uses derive_seed(seed, k).
PolicyParams train_grpo(PolicyParams params, const PolicyParams& ref_params, const Vocabulary& vocab,
                        const ContextSampler& sampler, const RewardFn& reward_fn, const GrpoConfig& config,
                        std::uint64_t seed, const StepCallback& on_step = {});

}  // namespace mvla::grpo
