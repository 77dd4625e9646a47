#pragma once

#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mvla/nav_env.hpp"

namespace mvla::metrics {

using env::Vec2;

struct MetricConfig {
    double success_radius = 3.0;
    double ndtw_threshold = 3.0;
    double grid_resolution = 0.25;
};

struct MetricReport {
    std::string arena_id;
    env::Difficulty difficulty = env::Difficulty::easy;
    double ne = 0.0;
    bool os = false;
    bool sr = false;
    double spl = 0.0;
    double ndtw = 0.0;
    double path_length = 0.0;
    double geodesic = 0.0;
    bool behavior_match = true;
};

double navigation_error(const env::EpisodeTrace& trace, Vec2 goal);

struct Success {
    bool sr = false;
    bool os = false;
};
// sr requires an explicit stop inside the radius; os only a visit.
Success success_and_oracle(const env::EpisodeTrace& trace, Vec2 goal, double radius);

// Throws std::invalid_argument for endpoints inside obstacles.
double geodesic_distance(const env::Arena& arena, Vec2 a, Vec2 b, double resolution = 0.25);

double path_length(std::span<const Vec2> points);
double spl(bool sr, double geodesic, double path_length);

// Full O(mn) DTW with match / insert / delete steps over Euclidean costs.
double dtw(std::span<const Vec2> a, std::span<const Vec2> b);
double ndtw(std::span<const Vec2> trace, std::span<const Vec2> reference, double d_threshold);

// True if `required` appears as an ordered subsequence of `emitted`.
bool behaviors_in_order(std::span<const std::string> emitted, std::span<const std::string> required);

MetricReport evaluate_episode(const env::EpisodeTrace& trace, const env::Arena& arena,
                              std::span<const Vec2> reference, const MetricConfig& config);

struct SummaryRow {
    std::size_t episodes = 0;
    double ne = 0.0;
    double os = 0.0;
    double sr = 0.0;
    double spl = 0.0;
    double ndtw = 0.0;
    double behavior_match = 0.0;
};

struct Summary {
    SummaryRow overall;
    std::map<env::Difficulty, SummaryRow> by_difficulty;
};

// Throws std::invalid_argument on an empty list.
Summary aggregate(std::span<const MetricReport> reports);

// Aligned plain-text table: one row per difficulty plus "all".
std::string format_table(const Summary& summary, const std::string& title = {});

}  // namespace mvla::metrics
