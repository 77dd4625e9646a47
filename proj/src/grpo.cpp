#include "mvla/grpo.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mvla/rng.hpp"

namespace mvla::grpo {

void GrpoConfig::validate() const {
    if (group_size < 2) {
        throw std::invalid_argument("grpo.group_size must be >= 2");
    }
    if (samples_per_step < 1) {
        throw std::invalid_argument("grpo.samples_per_step must be >= 1");
    }
    if (!(clip_epsilon > 0.0 && clip_epsilon < 1.0)) {
        throw std::invalid_argument("grpo.clip_epsilon must lie in (0, 1)");
    }
    if (!(kl_beta >= 0.0) || !std::isfinite(kl_beta)) {
        throw std::invalid_argument("grpo.kl_beta must be >= 0");
    }
    if (!(norm_epsilon > 0.0) || !std::isfinite(norm_epsilon)) {
        throw std::invalid_argument("grpo.norm_epsilon must be > 0");
    }
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("grpo.learning_rate must be >= 0");
    }
    if (inner_epochs < 1) {
        throw std::invalid_argument("grpo.inner_epochs must be >= 1");
    }
}

std::vector<double> compute_advantages(std::span<const double> rewards, double norm_epsilon) {
    if (rewards.size() < 2) {
        throw std::invalid_argument("advantage groups need at least two rewards");
    }
    const double n = static_cast<double>(rewards.size());
    double mean = 0.0;
    for (double r : rewards) {
        mean += r;
    }
    mean /= n;
    std::vector<double> centered(rewards.size());
    double var = 0.0;
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        centered[i] = rewards[i] - mean;
        var += centered[i] * centered[i];
    }
    const double sigma = std::sqrt(var / n);
    // Exactly-equal rewards can leave rounding residue in `centered`.
    const bool constant = std::all_of(rewards.begin(), rewards.end(), [&](double r) { return r == rewards[0]; });
    for (double& a : centered) {
        a = constant ? 0.0 : a / (sigma + norm_epsilon);
    }
    return centered;
}

double importance_ratio(double new_logprob, double old_logprob) {
    const double diff = new_logprob - old_logprob;
    if (!std::isfinite(diff) || std::abs(diff) > kMaxLogRatio) {
        throw RatioOverflowError("log importance ratio " + std::to_string(diff) + " exceeds +-80");
    }
    return std::exp(diff);
}

double clipped_term(double ratio, double advantage, double clip_epsilon) {
    const double clipped = std::clamp(ratio, 1.0 - clip_epsilon, 1.0 + clip_epsilon);
    return std::min(ratio * advantage, clipped * advantage);
}

double categorical_kl(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) {
        throw std::invalid_argument("KL needs distributions over the same vocabulary");
    }
    double kl = 0.0;
    for (std::size_t k = 0; k < p.size(); ++k) {
        if (p[k] < 0.0 || q[k] < 0.0) {
            throw std::invalid_argument("negative probability in KL");
        }
        if (p[k] > 0.0) {
            kl += p[k] * (std::log(p[k]) - std::log(std::max(q[k], kProbabilityFloor)));
        }
    }
    return kl;
}

double kl_penalty(std::span<const std::vector<double>> theta_dists, std::span<const std::vector<double>> ref_dists) {
    if (theta_dists.size() != ref_dists.size()) {
        throw std::invalid_argument("KL needs matching step counts");
    }
    double total = 0.0;
    for (std::size_t t = 0; t < theta_dists.size(); ++t) {
        total += categorical_kl(theta_dists[t], ref_dists[t]);
    }
    return total;
}

double grpo_objective(const ResponseGroup& group, const PolicyParams& params, const PolicyParams& ref_params,
                      const GrpoConfig& config, PolicyParams* grad, ObjectiveStats* stats) {
    const std::size_t G = group.responses.size();
    if (G == 0 || group.advantages.size() != G || group.old_logprobs.size() != G) {
        throw std::invalid_argument("response group is missing advantages or old logprobs");
    }
    const double inv_g = 1.0 / static_cast<double>(G);
    const double log_floor = std::log(kProbabilityFloor);
    const std::size_t V = params.vocab_size();

    double objective = 0.0;
    double kl_sum = 0.0;
    std::size_t clipped = 0;
    for (std::size_t j = 0; j < G; ++j) {
        const auto& tokens = group.responses[j].tokens;
        const ForwardPass pass = forward(params, group.context, tokens);
        const ForwardPass ref = forward(ref_params, group.context, tokens);
        const double ratio = importance_ratio(pass.logprob, group.old_logprobs[j]);
        const double adv = group.advantages[j];
        const double term = clipped_term(ratio, adv, config.clip_epsilon);
        if (ratio < 1.0 - config.clip_epsilon || ratio > 1.0 + config.clip_epsilon) {
            ++clipped;
        }

        std::vector<double> step_kl(pass.steps(), 0.0);
        double kl = 0.0;
        for (std::size_t t = 0; t < pass.steps(); ++t) {
            double s = 0.0;
            for (std::size_t k = 0; k < V; ++k) {
                const double lp = pass.log_probs[t * V + k];
                const double lq = std::max(ref.log_probs[t * V + k], log_floor);
                s += std::exp(lp) * (lp - lq);
            }
            step_kl[t] = s;
            kl += s;
        }
        objective += inv_g * (term - config.kl_beta * kl);
        kl_sum += kl;

        if (grad != nullptr) {
            // d term / d logprob: the unclipped branch is active unless the
            // clipped product is strictly smaller.
            const double clip_value = std::clamp(ratio, 1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon);
            const double dterm = ratio * adv <= clip_value * adv ? ratio * adv : 0.0;
            const double a = inv_g * dterm;
            const double b = inv_g * config.kl_beta;
            std::vector<double> dz(pass.steps() * V);
            for (std::size_t t = 0; t < pass.steps(); ++t) {
                for (std::size_t k = 0; k < V; ++k) {
                    const double lp = pass.log_probs[t * V + k];
                    const double lq = std::max(ref.log_probs[t * V + k], log_floor);
                    const double prob = std::exp(lp);
                    const double onehot = k == tokens[t] ? 1.0 : 0.0;
                    dz[t * V + k] = a * (onehot - prob) - b * prob * (lp - lq - step_kl[t]);
                }
            }
            backward(params, group.context, pass, dz, *grad);
        }
    }
    if (stats != nullptr) {
        stats->value = objective;
        stats->mean_kl = kl_sum * inv_g;
        stats->clip_fraction = static_cast<double>(clipped) * inv_g;
        stats->responses = G;
    }
    return objective;
}

double batch_objective(std::span<const ResponseGroup> groups, const PolicyParams& params,
                       const PolicyParams& ref_params, const GrpoConfig& config, PolicyParams* grad,
                       ObjectiveStats* stats) {
    if (groups.empty()) {
        throw std::invalid_argument("batch objective needs at least one group");
    }
    const double inv_s = 1.0 / static_cast<double>(groups.size());
    PolicyParams group_grad;
    if (grad != nullptr) {
        group_grad = PolicyParams(params.config(), params.vocab_size());
    }
    double total = 0.0;
    double kl = 0.0;
    double clipped = 0.0;
    std::size_t responses = 0;
    for (const auto& group : groups) {
        ObjectiveStats s;
        if (grad != nullptr) {
            group_grad.set_zero();
        }
        total += inv_s * grpo_objective(group, params, ref_params, config, grad ? &group_grad : nullptr, &s);
        if (grad != nullptr) {
            grad->axpy(inv_s, group_grad);
        }
        kl += s.mean_kl * static_cast<double>(s.responses);
        clipped += s.clip_fraction * static_cast<double>(s.responses);
        responses += s.responses;
    }
    if (stats != nullptr) {
        stats->value = total;
        stats->mean_kl = kl / static_cast<double>(responses);
        stats->clip_fraction = clipped / static_cast<double>(responses);
        stats->responses = responses;
    }
    return total;
}

std::vector<ResponseGroup> collect_groups(const PolicyParams& params, const Vocabulary& vocab,
                                          const ContextSampler& sampler, const RewardFn& reward_fn,
                                          const GrpoConfig& config, std::uint64_t seed) {
    std::vector<ResponseGroup> groups;
    groups.reserve(config.samples_per_step);
    for (std::size_t s = 0; s < config.samples_per_step; ++s) {
        TrainingContext ctx = sampler(derive_seed(seed, 1, s));
        ResponseGroup g;
        g.context = std::move(ctx.observation);
        g.target = std::move(ctx.target);
        g.responses = sample_group(params, vocab, g.context, config.group_size, derive_seed(seed, 2, s));
        std::vector<double> totals;
        for (const auto& r : g.responses) {
            g.rewards.push_back(reward_fn(r.text, g.target));
            totals.push_back(g.rewards.back().total);
            g.old_logprobs.push_back(r.logprob);
        }
        g.advantages = compute_advantages(totals, config.norm_epsilon);
        groups.push_back(std::move(g));
    }
    return groups;
}

StepResult grpo_step(const PolicyParams& params, const PolicyParams& ref_params, const Vocabulary& vocab,
                     const ContextSampler& sampler, const RewardFn& reward_fn, const GrpoConfig& config,
                     std::uint64_t seed) {
    config.validate();
    const std::vector<ResponseGroup> groups = collect_groups(params, vocab, sampler, reward_fn, config, seed);

    StepResult result{params, {}};
    UpdateReport& report = result.report;
    double n = 0.0;
    for (const auto& g : groups) {
        for (const auto& r : g.rewards) {
            report.mean_reward += r.total;
            report.mean_movement += r.movement;
            report.mean_action += r.action;
            report.mean_format += r.format;
            n += 1.0;
        }
    }
    report.mean_reward /= n;
    report.mean_movement /= n;
    report.mean_action /= n;
    report.mean_format /= n;

    for (std::size_t epoch = 0; epoch < config.inner_epochs; ++epoch) {
        ObjectiveStats stats;
        double value = 0.0;
        const PolicyParams grad = objective_gradient(
            result.params,
            [&](const PolicyParams& p, PolicyParams* g) {
                return batch_objective(groups, p, ref_params, config, g, &stats);
            },
            &value);
        if (epoch == 0) {
            report.objective_value = value;
            report.mean_kl = stats.mean_kl;
            report.clip_fraction = stats.clip_fraction;
            report.grad_norm = grad.norm();
        }
        result.params.axpy(config.learning_rate, grad);
    }
    if (!result.params.all_finite()) {
        throw NonFiniteError("parameters became non-finite after update");
    }
    return result;
}

PolicyParams train_grpo(PolicyParams params, const PolicyParams& ref_params, const Vocabulary& vocab,
                        const ContextSampler& sampler, const RewardFn& reward_fn, const GrpoConfig& config,
                        std::uint64_t seed, const StepCallback& on_step) {
    config.validate();
    for (std::size_t step = 0; step < config.max_updates; ++step) {
        StepResult r = grpo_step(params, ref_params, vocab, sampler, reward_fn, config, derive_seed(seed, step));
        params = std::move(r.params);
        if (on_step) {
            on_step(step, r.report);
        }
    }
    return params;
}

}  // namespace mvla::grpo
