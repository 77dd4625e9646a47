#include "mvla/reward.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mvla {

void RewardWeights::validate() const {
    const auto ok = [](double w) { return std::isfinite(w) && w >= 0.0; };
    if (!ok(movement) || !ok(action) || !ok(format)) {
        throw std::invalid_argument("reward weights must be finite and nonnegative");
    }
    if (movement + action + format <= 0.0) {
        throw std::invalid_argument("at least one reward weight must be positive");
    }
}

double movement_reward(const VelocityTriple& pred, const VelocityTriple& gt) {
    const double pred_norm = std::sqrt(pred.vx * pred.vx + pred.vy * pred.vy + pred.wyaw * pred.wyaw);
    const double gt_norm = std::sqrt(gt.vx * gt.vx + gt.vy * gt.vy + gt.wyaw * gt.wyaw);
    const bool pred_zero = pred_norm < kZeroNormThreshold;
    const bool gt_zero = gt_norm < kZeroNormThreshold;
    if (pred_zero || gt_zero) {
        return pred_zero && gt_zero ? 1.0 : 0.0;
    }
    const double dot = pred.vx * gt.vx + pred.vy * gt.vy + pred.wyaw * gt.wyaw;
    return std::clamp(dot / (pred_norm * gt_norm), -1.0, 1.0);
}

double action_reward(std::string_view pred, std::string_view gt) { return pred == gt ? 1.0 : 0.0; }

double format_reward(std::string_view raw, const ActionRegistry& registry, const VelocityLimits& limits) {
    return check_format(raw, registry, limits).valid ? 1.0 : 0.0;
}

double format_reward(std::string_view raw) { return check_format(raw).valid ? 1.0 : 0.0; }

RewardBreakdown composite_reward(std::string_view raw, const ControlCommand& gt,
                                 const RewardWeights& weights, const ActionRegistry& registry,
                                 const VelocityLimits& limits) {
    const ParseOutcome parsed = parse_response(raw, registry, limits);
    if (!parsed.ok()) {
        return {};
    }
    RewardBreakdown r;
    r.movement = movement_reward(VelocityTriple::of(parsed.response->command), VelocityTriple::of(gt));
    r.action = action_reward(parsed.response->command.action, gt.action);
    r.format = 1.0;
    r.total = weights.movement * r.movement + weights.action * r.action + weights.format * r.format;
    return r;
}

}  // namespace mvla
