#pragma once

#include <string_view>

#include "mvla/structured_output.hpp"

namespace mvla {

struct VelocityTriple {
    double vx = 0.0;
    double vy = 0.0;
    double wyaw = 0.0;

    static VelocityTriple of(const ControlCommand& c) { return {c.vx, c.vy, c.wyaw}; }
};

struct RewardWeights {
    double movement = 1.0;
    double action = 1.0;
    double format = 1.0;

    // Throws std::invalid_argument unless all weights are >= 0 and at least one is > 0.
    void validate() const;
    bool operator==(const RewardWeights&) const = default;
};

struct RewardBreakdown {
    double movement = 0.0;
    double action = 0.0;
    double format = 0.0;
    double total = 0.0;

    bool operator==(const RewardBreakdown&) const = default;
};

// Norms below this are treated as zero vectors.
inline constexpr double kZeroNormThreshold = 1e-9;

// Cosine similarity of the velocity parts. Both-zero scores 1 (a correct
// stop); exactly-one-zero scores 0.
double movement_reward(const VelocityTriple& pred, const VelocityTriple& gt);
double action_reward(std::string_view pred, std::string_view gt);
double format_reward(std::string_view raw, const ActionRegistry& registry, const VelocityLimits& limits);
double format_reward(std::string_view raw);

// Unparseable output scores (0, 0, 0, 0) regardless of weights.
RewardBreakdown composite_reward(std::string_view raw, const ControlCommand& gt,
                                 const RewardWeights& weights, const ActionRegistry& registry,
                                 const VelocityLimits& limits);

}  // namespace mvla
