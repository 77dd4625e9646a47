#pragma once

// Deterministic 2D continuous navigation arena.

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvla/policy.hpp"
#include "mvla/structured_output.hpp"

namespace mvla::env {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    bool operator==(const Vec2&) const = default;
};

double distance(Vec2 a, Vec2 b);
double wrap_angle(double angle);  // into (-pi, pi]

struct Rect {
    double x_min = 0.0;
    double y_min = 0.0;
    double x_max = 0.0;
    double y_max = 0.0;

    bool contains(Vec2 p) const;           // closed
    bool contains_interior(Vec2 p) const;  // open
    Rect inflated(double margin) const;
    double distance_to(Vec2 p) const;  // 0 inside
    bool operator==(const Rect&) const = default;
};

// Parameter t in [0, 1] where segment p->q first touches the closed rect.
std::optional<double> segment_contact(Vec2 p, Vec2 q, const Rect& rect);
// True if the segment passes through the open interior of the rect.
bool segment_enters_interior(Vec2 p, Vec2 q, const Rect& rect);

struct Pose {
    double x = 0.0;
    double y = 0.0;
    double yaw = 0.0;

    Vec2 position() const { return {x, y}; }
    bool operator==(const Pose&) const = default;
};

enum class Difficulty { easy, medium, hard };
std::string_view to_string(Difficulty d);
Difficulty difficulty_from_string(std::string_view name);

struct BehaviorZone {
    std::string label;
    Vec2 center;
    double radius = 1.0;

    bool operator==(const BehaviorZone&) const = default;
};

struct Arena {
    std::string id;
    Difficulty difficulty = Difficulty::easy;
    Rect bounds{0.0, 0.0, 15.0, 15.0};
    std::vector<Rect> obstacles;
    Pose start;
    Vec2 goal;
    int instruction_id = 0;
    // Behaviors that must be emitted in order, each inside its zone.
    std::vector<BehaviorZone> required_behaviors;

    std::vector<std::string> required_labels() const;
    bool in_free_space(Vec2 p) const;
    bool operator==(const Arena&) const = default;
};

std::string_view instruction_text(int instruction_id);
inline constexpr int kInstructionCount = 4;

struct EnvConfig {
    double dt = 0.5;
    double v_max = 1.0;
    double w_max = 1.0;
    int max_steps = 60;
    double success_radius = 3.0;

    VelocityLimits limits() const { return {v_max, w_max}; }
    void validate() const;
    bool operator==(const EnvConfig&) const = default;
};

struct AgentState {
    double x = 0.0;
    double y = 0.0;
    double yaw = 0.0;
    bool collided = false;
    int step_index = 0;
    // Number of required behaviors already emitted, in order.
    int behaviors_done = 0;

    Vec2 position() const { return {x, y}; }
    Pose pose() const { return {x, y, yaw}; }
    bool operator==(const AgentState&) const = default;
};

AgentState initial_state(const Arena& arena);

inline constexpr double kContactMargin = 1e-3;

// Body-frame kinematic integration with first-contact clamping. Velocities
// are clamped to the configured limits; the action label only advances
// behavior progress.
AgentState step(const AgentState& state, const ControlCommand& command, const Arena& arena,
                const EnvConfig& config);

// 8-connected lattice planner. Nodes sit at bounds.min + (i, j) * resolution;
// a node is blocked if it lies inside an obstacle inflated by `clearance` or
// closer than `clearance` to the bounds.
class GridPlanner {
  public:
    static constexpr double kInfinity = std::numeric_limits<double>::infinity();

    GridPlanner(const Arena& arena, double resolution, double clearance = 0.0);

    double resolution() const { return resolution_; }
    std::size_t nx() const { return nx_; }
    std::size_t ny() const { return ny_; }
    std::size_t index(std::size_t i, std::size_t j) const { return j * nx_ + i; }
    Vec2 node_position(std::size_t idx) const;
    bool node_free(std::size_t idx) const { return free_[idx] != 0; }

    // Straight segment inside bounds and clear of obstacles inflated by `margin`.
    bool segment_clear(Vec2 a, Vec2 b, double margin) const;
    bool visible(Vec2 a, Vec2 b) const { return segment_clear(a, b, clearance_); }
    // Nearest free node visible from p, if any.
    std::optional<std::size_t> snap(Vec2 p) const;

    // Dijkstra distances from every node to `target`; kInfinity if unreachable.
    std::vector<double> distance_field(Vec2 target) const;
    double geodesic(Vec2 a, Vec2 b) const;
    // Node chain from a to b (inclusive of the endpoints), empty if disconnected.
    std::vector<Vec2> path(Vec2 a, Vec2 b) const;

  private:
    std::vector<double> dijkstra(std::size_t source) const;

    Rect bounds_;
    std::vector<Rect> obstacles_;
    double resolution_;
    double clearance_;
    std::size_t nx_ = 0;
    std::size_t ny_ = 0;
    std::vector<Rect> inflated_;
    std::vector<char> free_;
};

// Observation feature layout (kFeatureDim entries):
//   0,1  goal displacement in body frame / 5 m
//   2    goal distance / 5 m
//   3    heading error toward the next waypoint (rad)
//   4-7  free range front, left, back, right, min(d, 5 m) / 2.5 m
//   8    remaining-step fraction
//   9-11 inside the zone of the next pending crawl / unload / distinguish
//   12   1 if a required behavior is still pending
inline constexpr std::size_t kFeatureDim = 13;

struct OracleDecision {
    Maneuver maneuver = Maneuver::stop;
    std::string think;
    ControlCommand command;
};

// Arena-bound helper: planner fields for every navigation target, feature
// extraction and the expert controller.
class Navigator {
  public:
    static constexpr double kGridResolution = 0.25;
    static constexpr double kPlannerClearance = 0.5;
    static constexpr double kVisibilityMargin = 0.3;
    static constexpr double kLookahead = 2.5;
    static constexpr double kTurnGain = 1.5;
    static constexpr double kSpeedGain = 0.5;

    Navigator(const Arena& arena, const EnvConfig& config);

    const Arena& arena() const { return arena_; }
    const EnvConfig& config() const { return config_; }

    // Current navigation target: the pending behavior zone, else the goal.
    Vec2 target(const AgentState& state) const;
    Vec2 waypoint(const AgentState& state) const;
    double heading_error(const AgentState& state) const;
    ObservationContext observe(const AgentState& state) const;
    OracleDecision oracle(const AgentState& state) const;
    // Oracle route length from the start through every zone to the goal.
    double route_length() const;

  private:
    const std::vector<double>& field_for(const AgentState& state) const;
    double free_range(Vec2 p, double angle) const;

    Arena arena_;
    EnvConfig config_;
    GridPlanner planner_;
    std::vector<std::vector<double>> fields_;  // per behavior zone, then goal
};

OracleDecision oracle_command(const AgentState& state, const Arena& arena, const EnvConfig& config);

enum class Termination { stop_action, max_steps, collision_halt };
std::string_view to_string(Termination t);
Termination termination_from_string(std::string_view name);

struct EpisodeTrace {
    std::string arena_id;
    std::vector<Pose> poses;  // includes the start pose
    std::vector<ControlCommand> commands;
    std::vector<std::string> raw_responses;
    std::vector<bool> format_ok;
    Termination terminated_by = Termination::max_steps;
    std::vector<std::string> behaviors_emitted;
    std::vector<AgentState> states;  // state before each command, plus final

    std::vector<Vec2> positions() const;
    std::size_t format_failures() const;
    bool operator==(const EpisodeTrace&) const = default;
};

// Produces one raw response for the current state; `seed` is a per-step
// derived stream.
using ResponseSource =
    std::function<std::string(const AgentState& state, const ObservationContext& obs, std::uint64_t seed)>;

ResponseSource policy_source(const PolicyParams& params, const Vocabulary& vocab);
ResponseSource oracle_source(const Navigator& navigator);

inline constexpr int kCollisionHaltStreak = 3;

EpisodeTrace rollout(const Navigator& navigator, const ResponseSource& source, const ActionRegistry& registry,
                     std::uint64_t seed);
EpisodeTrace rollout(const PolicyParams& params, const Vocabulary& vocab, const Arena& arena,
                     const EnvConfig& config, const ActionRegistry& registry, std::uint64_t seed);

// Procedural suites; arena k of a tier is generated from derive_seed(seed, tier, k).
std::vector<Arena> make_arena_suite(std::uint64_t seed, std::size_t n, Difficulty difficulty,
                                    const EnvConfig& config = {});

}  // namespace mvla::env
