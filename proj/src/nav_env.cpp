#include "mvla/nav_env.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>
#include <stdexcept>

#include "mvla/rng.hpp"

namespace mvla::env {

namespace {

constexpr double kPi = std::numbers::pi;

double clamp_abs(double v, double bound) { return std::clamp(v, -bound, bound); }

// Liang-Barsky clip of p + t d against a closed rect; returns [t0, t1].
std::optional<std::pair<double, double>> clip_segment(Vec2 p, Vec2 d, const Rect& r, bool strict) {
    double t0 = 0.0, t1 = 1.0;
    const double pk[4] = {-d.x, d.x, -d.y, d.y};
    const double qk[4] = {p.x - r.x_min, r.x_max - p.x, p.y - r.y_min, r.y_max - p.y};
    for (int k = 0; k < 4; ++k) {
        if (pk[k] == 0.0) {
            if (strict ? qk[k] <= 0.0 : qk[k] < 0.0) {
                return std::nullopt;
            }
            continue;
        }
        const double t = qk[k] / pk[k];
        if (pk[k] < 0.0) {
            t0 = std::max(t0, t);
        } else {
            t1 = std::min(t1, t);
        }
    }
    if (strict ? !(t0 < t1) : t0 > t1) {
        return std::nullopt;
    }
    return std::make_pair(t0, t1);
}

// Distance from p along unit direction u to the first obstacle or wall.
double ray_range(Vec2 p, Vec2 u, const Rect& bounds, std::span<const Rect> obstacles, double cap) {
    double best = cap;
    const auto exit_axis = [](double pos, double dir, double lo, double hi) {
        if (dir > 0.0) return (hi - pos) / dir;
        if (dir < 0.0) return (lo - pos) / dir;
        return std::numeric_limits<double>::infinity();
    };
    best = std::min(best, std::max(0.0, exit_axis(p.x, u.x, bounds.x_min, bounds.x_max)));
    best = std::min(best, std::max(0.0, exit_axis(p.y, u.y, bounds.y_min, bounds.y_max)));
    const Vec2 far{u.x * cap, u.y * cap};
    for (const auto& r : obstacles) {
        if (const auto hit = clip_segment(p, far, r, false)) {
            best = std::min(best, hit->first * cap);
        }
    }
    return best;
}

}  // namespace

double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

double wrap_angle(double angle) {
    double a = std::fmod(angle + kPi, 2.0 * kPi);
    if (a < 0.0) {
        a += 2.0 * kPi;
    }
    a -= kPi;
    return a <= -kPi ? a + 2.0 * kPi : a;
}

bool Rect::contains(Vec2 p) const { return p.x >= x_min && p.x <= x_max && p.y >= y_min && p.y <= y_max; }

bool Rect::contains_interior(Vec2 p) const { return p.x > x_min && p.x < x_max && p.y > y_min && p.y < y_max; }

Rect Rect::inflated(double margin) const { return {x_min - margin, y_min - margin, x_max + margin, y_max + margin}; }

double Rect::distance_to(Vec2 p) const {
    const double dx = std::max({x_min - p.x, 0.0, p.x - x_max});
    const double dy = std::max({y_min - p.y, 0.0, p.y - y_max});
    return std::hypot(dx, dy);
}

std::optional<double> segment_contact(Vec2 p, Vec2 q, const Rect& rect) {
    const auto hit = clip_segment(p, {q.x - p.x, q.y - p.y}, rect, false);
    if (!hit) {
        return std::nullopt;
    }
    return hit->first;
}

bool segment_enters_interior(Vec2 p, Vec2 q, const Rect& rect) {
    return clip_segment(p, {q.x - p.x, q.y - p.y}, rect, true).has_value();
}

std::string_view to_string(Difficulty d) {
    switch (d) {
        case Difficulty::easy: return "easy";
        case Difficulty::medium: return "medium";
        case Difficulty::hard: return "hard";
    }
    return "easy";
}

Difficulty difficulty_from_string(std::string_view name) {
    if (name == "easy") return Difficulty::easy;
    if (name == "medium") return Difficulty::medium;
    if (name == "hard") return Difficulty::hard;
    throw std::invalid_argument("unknown difficulty '" + std::string(name) + "'");
}

std::vector<std::string> Arena::required_labels() const {
    std::vector<std::string> out;
    for (const auto& z : required_behaviors) {
        out.push_back(z.label);
    }
    return out;
}

bool Arena::in_free_space(Vec2 p) const {
    if (!bounds.contains(p)) {
        return false;
    }
    return std::none_of(obstacles.begin(), obstacles.end(), [&](const Rect& r) { return r.contains(p); });
}

std::string_view instruction_text(int instruction_id) {
    switch (instruction_id) {
        case 0: return "walk to the goal and stop there";
        case 1: return "crawl through the low passage on the way, then walk to the goal";
        case 2: return "walk to the goal and unload the cargo there";
        case 3: return "walk to the marked object, distinguish it, then walk to the goal";
        default: break;
    }
    throw std::invalid_argument("unknown instruction id " + std::to_string(instruction_id));
}

void EnvConfig::validate() const {
    const auto pos = [](double v) { return std::isfinite(v) && v > 0.0; };
    if (!pos(dt) || !pos(v_max) || !pos(w_max) || !pos(success_radius) || max_steps <= 0) {
        throw std::invalid_argument("env config values must all be positive");
    }
}

AgentState initial_state(const Arena& arena) {
    AgentState s;
    s.x = arena.start.x;
    s.y = arena.start.y;
    s.yaw = wrap_angle(arena.start.yaw);
    return s;
}

AgentState step(const AgentState& state, const ControlCommand& command, const Arena& arena,
                const EnvConfig& config) {
    const double vx = clamp_abs(command.vx, config.v_max);
    const double vy = clamp_abs(command.vy, config.v_max);
    const double wyaw = clamp_abs(command.wyaw, config.w_max);
    const double c = std::cos(state.yaw), s = std::sin(state.yaw);
    const Vec2 p = state.position();
    const Vec2 d{(vx * c - vy * s) * config.dt, (vx * s + vy * c) * config.dt};

    AgentState next = state;
    next.collided = false;
    next.step_index = state.step_index + 1;
    next.yaw = wrap_angle(state.yaw + wyaw * config.dt);

    double t_contact = 1.0;
    bool contact = false;
    const double len = std::hypot(d.x, d.y);
    if (len > 0.0) {
        const Rect& b = arena.bounds;
        const auto exit_param = [](double pos, double dir, double lo, double hi) {
            if (dir > 0.0) return (hi - pos) / dir;
            if (dir < 0.0) return (lo - pos) / dir;
            return std::numeric_limits<double>::infinity();
        };
        const double t_bounds = std::min(exit_param(p.x, d.x, b.x_min, b.x_max), exit_param(p.y, d.y, b.y_min, b.y_max));
        if (t_bounds <= 1.0) {
            t_contact = std::max(0.0, t_bounds);
            contact = true;
        }
        for (const auto& r : arena.obstacles) {
            if (const auto t = segment_contact(p, {p.x + d.x, p.y + d.y}, r); t && *t <= t_contact) {
                t_contact = *t;
                contact = true;
            }
        }
    }
    if (contact) {
        const double t = std::max(0.0, t_contact - kContactMargin / len);
        next.x = p.x + t * d.x;
        next.y = p.y + t * d.y;
        next.collided = true;
    } else {
        next.x = p.x + d.x;
        next.y = p.y + d.y;
    }

    const auto& required = arena.required_behaviors;
    if (next.behaviors_done < static_cast<int>(required.size()) &&
        command.action == required[static_cast<std::size_t>(next.behaviors_done)].label) {
        ++next.behaviors_done;
    }
    return next;
}

// ---------------------------------------------------------------------------
// GridPlanner

GridPlanner::GridPlanner(const Arena& arena, double resolution, double clearance)
    : bounds_(arena.bounds), obstacles_(arena.obstacles), resolution_(resolution), clearance_(clearance) {
    if (!(resolution > 0.0)) {
        throw std::invalid_argument("grid resolution must be positive");
    }
    nx_ = static_cast<std::size_t>(std::floor((bounds_.x_max - bounds_.x_min) / resolution + 1e-9)) + 1;
    ny_ = static_cast<std::size_t>(std::floor((bounds_.y_max - bounds_.y_min) / resolution + 1e-9)) + 1;
    for (const auto& r : obstacles_) {
        inflated_.push_back(r.inflated(clearance));
    }
    free_.assign(nx_ * ny_, 1);
    for (std::size_t idx = 0; idx < free_.size(); ++idx) {
        const Vec2 p = node_position(idx);
        const bool near_wall = p.x - bounds_.x_min < clearance || bounds_.x_max - p.x < clearance ||
                               p.y - bounds_.y_min < clearance || bounds_.y_max - p.y < clearance;
        const bool blocked = std::any_of(inflated_.begin(), inflated_.end(),
                                         [&](const Rect& r) { return r.contains_interior(p); });
        free_[idx] = (near_wall || blocked) ? 0 : 1;
    }
}

Vec2 GridPlanner::node_position(std::size_t idx) const {
    return {bounds_.x_min + static_cast<double>(idx % nx_) * resolution_,
            bounds_.y_min + static_cast<double>(idx / nx_) * resolution_};
}

bool GridPlanner::segment_clear(Vec2 a, Vec2 b, double margin) const {
    if (!bounds_.contains(a) || !bounds_.contains(b)) {
        return false;
    }
    for (const auto& r : obstacles_) {
        if (segment_enters_interior(a, b, margin > 0.0 ? r.inflated(margin) : r)) {
            return false;
        }
    }
    return true;
}

std::optional<std::size_t> GridPlanner::snap(Vec2 p) const {
    std::vector<std::pair<double, std::size_t>> order;
    order.reserve(free_.size());
    for (std::size_t idx = 0; idx < free_.size(); ++idx) {
        if (free_[idx]) {
            order.emplace_back(distance(p, node_position(idx)), idx);
        }
    }
    std::sort(order.begin(), order.end());
    for (const auto& [d, idx] : order) {
        if (segment_clear(p, node_position(idx), 0.0)) {
            return idx;
        }
    }
    return std::nullopt;
}

std::vector<double> GridPlanner::dijkstra(std::size_t source) const {
    std::vector<double> dist(free_.size(), kInfinity);
    if (!free_[source]) {
        return dist;
    }
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    dist[source] = 0.0;
    queue.emplace(0.0, source);
    const int di[8] = {1, -1, 0, 0, 1, 1, -1, -1};
    const int dj[8] = {0, 0, 1, -1, 1, -1, 1, -1};
    while (!queue.empty()) {
        const auto [d, idx] = queue.top();
        queue.pop();
        if (d > dist[idx]) {
            continue;
        }
        const auto i = static_cast<long>(idx % nx_);
        const auto j = static_cast<long>(idx / nx_);
        const Vec2 p = node_position(idx);
        for (int k = 0; k < 8; ++k) {
            const long ni = i + di[k], nj = j + dj[k];
            if (ni < 0 || nj < 0 || ni >= static_cast<long>(nx_) || nj >= static_cast<long>(ny_)) {
                continue;
            }
            const std::size_t nidx = index(static_cast<std::size_t>(ni), static_cast<std::size_t>(nj));
            if (!free_[nidx]) {
                continue;
            }
            const double step_cost = (k < 4 ? 1.0 : std::numbers::sqrt2) * resolution_;
            const double nd = d + step_cost;
            if (nd >= dist[nidx]) {
                continue;
            }
            if (!segment_clear(p, node_position(nidx), clearance_)) {
                continue;
            }
            dist[nidx] = nd;
            queue.emplace(nd, nidx);
        }
    }
    return dist;
}

std::vector<double> GridPlanner::distance_field(Vec2 target) const {
    const auto t = snap(target);
    if (!t) {
        return std::vector<double>(free_.size(), kInfinity);
    }
    return dijkstra(*t);
}

double GridPlanner::geodesic(Vec2 a, Vec2 b) const {
    for (const auto& r : obstacles_) {
        if (r.contains_interior(a) || r.contains_interior(b)) {
            throw std::invalid_argument("geodesic endpoint lies inside an obstacle");
        }
    }
    if (!bounds_.contains(a) || !bounds_.contains(b)) {
        throw std::invalid_argument("geodesic endpoint lies outside the arena");
    }
    if (segment_clear(a, b, clearance_)) {
        return distance(a, b);
    }
    const auto na = snap(a);
    const auto nb = snap(b);
    if (!na || !nb) {
        return kInfinity;
    }
    const auto field = dijkstra(*nb);
    if (!std::isfinite(field[*na])) {
        return kInfinity;
    }
    return distance(a, node_position(*na)) + field[*na] + distance(node_position(*nb), b);
}

std::vector<Vec2> GridPlanner::path(Vec2 a, Vec2 b) const {
    const auto na = snap(a);
    const auto nb = snap(b);
    if (!na || !nb) {
        return {};
    }
    const auto field = dijkstra(*nb);
    if (!std::isfinite(field[*na])) {
        return {};
    }
    std::vector<Vec2> out{a};
    std::size_t cur = *na;
    while (cur != *nb) {
        out.push_back(node_position(cur));
        const auto i = static_cast<long>(cur % nx_);
        const auto j = static_cast<long>(cur / nx_);
        std::size_t best = cur;
        double best_d = field[cur];
        for (long dj = -1; dj <= 1; ++dj) {
            for (long di = -1; di <= 1; ++di) {
                const long ni = i + di, nj = j + dj;
                if ((di == 0 && dj == 0) || ni < 0 || nj < 0 || ni >= static_cast<long>(nx_) ||
                    nj >= static_cast<long>(ny_)) {
                    continue;
                }
                const std::size_t n = index(static_cast<std::size_t>(ni), static_cast<std::size_t>(nj));
                if (field[n] < best_d) {
                    best_d = field[n];
                    best = n;
                }
            }
        }
        if (best == cur) {
            break;
        }
        cur = best;
    }
    out.push_back(node_position(*nb));
    out.push_back(b);
    return out;
}

// ---------------------------------------------------------------------------
// Navigator

Navigator::Navigator(const Arena& arena, const EnvConfig& config)
    : arena_(arena), config_(config), planner_(arena, kGridResolution, kPlannerClearance) {
    config_.validate();
    for (const auto& zone : arena_.required_behaviors) {
        fields_.push_back(planner_.distance_field(zone.center));
    }
    fields_.push_back(planner_.distance_field(arena_.goal));
}

Vec2 Navigator::target(const AgentState& state) const {
    const auto& zones = arena_.required_behaviors;
    if (state.behaviors_done < static_cast<int>(zones.size())) {
        return zones[static_cast<std::size_t>(state.behaviors_done)].center;
    }
    return arena_.goal;
}

const std::vector<double>& Navigator::field_for(const AgentState& state) const {
    const auto pending = static_cast<std::size_t>(std::max(0, state.behaviors_done));
    return fields_[std::min(pending, fields_.size() - 1)];
}

Vec2 Navigator::waypoint(const AgentState& state) const {
    const Vec2 p = state.position();
    const Vec2 t = target(state);
    if (planner_.segment_clear(p, t, kVisibilityMargin)) {
        return t;
    }
    const auto& field = field_for(state);
    const double res = planner_.resolution();
    const auto span = static_cast<long>(std::ceil(kLookahead / res));
    const auto ci = static_cast<long>(std::lround((p.x - arena_.bounds.x_min) / res));
    const auto cj = static_cast<long>(std::lround((p.y - arena_.bounds.y_min) / res));
    for (double margin : {kVisibilityMargin, 0.0}) {
        double best_cost = GridPlanner::kInfinity;
        std::optional<Vec2> best;
        for (long j = cj - span; j <= cj + span; ++j) {
            for (long i = ci - span; i <= ci + span; ++i) {
                if (i < 0 || j < 0 || i >= static_cast<long>(planner_.nx()) || j >= static_cast<long>(planner_.ny())) {
                    continue;
                }
                const std::size_t idx = planner_.index(static_cast<std::size_t>(i), static_cast<std::size_t>(j));
                if (!planner_.node_free(idx) || !std::isfinite(field[idx])) {
                    continue;
                }
                const Vec2 n = planner_.node_position(idx);
                const double reach = distance(p, n);
                if (reach > kLookahead) {
                    continue;
                }
                const double cost = reach + field[idx];
                if (cost < best_cost && planner_.segment_clear(p, n, margin)) {
                    best_cost = cost;
                    best = n;
                }
            }
        }
        if (best) {
            return *best;
        }
    }
    if (const auto n = planner_.snap(p)) {
        return planner_.node_position(*n);
    }
    return t;
}

double Navigator::heading_error(const AgentState& state) const {
    const Vec2 w = waypoint(state);
    const double dx = w.x - state.x, dy = w.y - state.y;
    if (std::hypot(dx, dy) < 1e-9) {
        return 0.0;
    }
    return wrap_angle(std::atan2(dy, dx) - state.yaw);
}

namespace {
constexpr double kDistanceScale = 5.0;
constexpr double kRangeScale = 2.5;
}  // namespace

double Navigator::free_range(Vec2 p, double angle) const {
    return ray_range(p, {std::cos(angle), std::sin(angle)}, arena_.bounds, arena_.obstacles, 5.0);
}

ObservationContext Navigator::observe(const AgentState& state) const {
    const Vec2 p = state.position();
    const double c = std::cos(state.yaw), s = std::sin(state.yaw);
    const double gx = arena_.goal.x - p.x, gy = arena_.goal.y - p.y;

    ObservationContext obs;
    obs.instruction_id = arena_.instruction_id;
    auto& f = obs.features;
    f.resize(kFeatureDim, 0.0);
    f[0] = (c * gx + s * gy) / kDistanceScale;
    f[1] = (-s * gx + c * gy) / kDistanceScale;
    f[2] = std::hypot(gx, gy) / kDistanceScale;
    f[3] = heading_error(state);
    for (int k = 0; k < 4; ++k) {
        f[4 + static_cast<std::size_t>(k)] = free_range(p, state.yaw + k * kPi / 2.0) / kRangeScale;
    }
    f[8] = std::clamp(1.0 - static_cast<double>(state.step_index) / config_.max_steps, 0.0, 1.0);
    const auto& zones = arena_.required_behaviors;
    if (state.behaviors_done < static_cast<int>(zones.size())) {
        const auto& zone = zones[static_cast<std::size_t>(state.behaviors_done)];
        f[12] = 1.0;
        if (distance(p, zone.center) <= zone.radius) {
            if (zone.label == "crawl") f[9] = 1.0;
            if (zone.label == "unload") f[10] = 1.0;
            if (zone.label == "distinguish") f[11] = 1.0;
        }
    }
    return obs;
}

OracleDecision Navigator::oracle(const AgentState& state) const {
    const Vec2 p = state.position();
    const auto& zones = arena_.required_behaviors;
    const bool pending = state.behaviors_done < static_cast<int>(zones.size());

    // Motion toward whatever target follows `s`.
    const auto drive = [&](const AgentState& s) -> std::pair<ControlCommand, Maneuver> {
        const bool more = s.behaviors_done < static_cast<int>(zones.size());
        if (!more && distance(p, arena_.goal) <= 0.5 * config_.success_radius) {
            return {ControlCommand{0.0, 0.0, 0.0, std::string(kStopLabel)}, Maneuver::stop};
        }
        const double err = heading_error(s);
        ControlCommand cmd;
        cmd.action = "move";
        cmd.wyaw = clamp_abs(kTurnGain * err, config_.w_max);
        cmd.vx = std::abs(err) < kPi / 6.0 ? std::clamp(kSpeedGain * distance(p, target(s)), 0.0, config_.v_max) : 0.0;
        cmd = quantize(cmd);
        const Maneuver m = cmd.vx > 0.0 ? Maneuver::forward : (cmd.wyaw >= 0.0 ? Maneuver::turn_left : Maneuver::turn_right);
        return {cmd, m};
    };

    OracleDecision out;
    if (pending) {
        const auto& zone = zones[static_cast<std::size_t>(state.behaviors_done)];
        if (distance(p, zone.center) <= zone.radius) {
            AgentState after = state;
            ++after.behaviors_done;
            auto [cmd, m] = drive(after);
            if (m == Maneuver::stop) {
                cmd = ControlCommand{};
            }
            cmd.action = zone.label;
            out.command = cmd;
            out.maneuver = zone.label == "crawl" ? Maneuver::crawl
                           : zone.label == "unload" ? Maneuver::unload
                                                    : Maneuver::distinguish;
            out.think = std::string(think_phrase(out.maneuver));
            return out;
        }
    }
    auto [cmd, m] = drive(state);
    out.command = cmd;
    out.maneuver = m;
    out.think = std::string(think_phrase(m));
    return out;
}

double Navigator::route_length() const {
    double total = 0.0;
    Vec2 from = arena_.start.position();
    for (const auto& zone : arena_.required_behaviors) {
        total += planner_.geodesic(from, zone.center);
        from = zone.center;
    }
    return total + planner_.geodesic(from, arena_.goal);
}

OracleDecision oracle_command(const AgentState& state, const Arena& arena, const EnvConfig& config) {
    return Navigator(arena, config).oracle(state);
}

// ---------------------------------------------------------------------------
// Rollouts

std::string_view to_string(Termination t) {
    switch (t) {
        case Termination::stop_action: return "stop_action";
        case Termination::max_steps: return "max_steps";
        case Termination::collision_halt: return "collision_halt";
    }
    return "max_steps";
}

Termination termination_from_string(std::string_view name) {
    if (name == "stop_action") return Termination::stop_action;
    if (name == "max_steps") return Termination::max_steps;
    if (name == "collision_halt") return Termination::collision_halt;
    throw std::invalid_argument("unknown termination '" + std::string(name) + "'");
}

std::vector<Vec2> EpisodeTrace::positions() const {
    std::vector<Vec2> out;
    out.reserve(poses.size());
    for (const auto& p : poses) {
        out.push_back(p.position());
    }
    return out;
}

std::size_t EpisodeTrace::format_failures() const {
    return static_cast<std::size_t>(std::count(format_ok.begin(), format_ok.end(), false));
}

ResponseSource policy_source(const PolicyParams& params, const Vocabulary& vocab) {
    return [params, vocab](const AgentState&, const ObservationContext& obs, std::uint64_t seed) {
        return sample_response(params, vocab, obs, seed).text;
    };
}

ResponseSource oracle_source(const Navigator& navigator) {
    return [&navigator](const AgentState& state, const ObservationContext&, std::uint64_t) {
        const OracleDecision d = navigator.oracle(state);
        return serialize(d.think, d.command);
    };
}

EpisodeTrace rollout(const Navigator& navigator, const ResponseSource& source, const ActionRegistry& registry,
                     std::uint64_t seed) {
    const Arena& arena = navigator.arena();
    const EnvConfig& config = navigator.config();
    const VelocityLimits limits = config.limits();

    EpisodeTrace trace;
    trace.arena_id = arena.id;
    AgentState state = initial_state(arena);
    trace.poses.push_back(state.pose());
    trace.states.push_back(state);
    int collision_streak = 0;
    for (int k = 0; k < config.max_steps; ++k) {
        const ObservationContext obs = navigator.observe(state);
        std::string raw = source(state, obs, derive_seed(seed, static_cast<std::uint64_t>(k)));
        const ParseOutcome parsed = parse_response(raw, registry, limits);
        ControlCommand command{0.0, 0.0, 0.0, "move"};
        if (parsed.ok()) {
            command = parsed.response->command;
            trace.behaviors_emitted.push_back(command.action);
        }
        state = step(state, command, arena, config);
        trace.poses.push_back(state.pose());
        trace.states.push_back(state);
        trace.commands.push_back(command);
        trace.raw_responses.push_back(std::move(raw));
        trace.format_ok.push_back(parsed.ok());
        if (parsed.ok() && command.action == kStopLabel) {
            trace.terminated_by = Termination::stop_action;
            return trace;
        }
        collision_streak = state.collided ? collision_streak + 1 : 0;
        if (collision_streak >= kCollisionHaltStreak) {
            trace.terminated_by = Termination::collision_halt;
            return trace;
        }
    }
    trace.terminated_by = Termination::max_steps;
    return trace;
}

EpisodeTrace rollout(const PolicyParams& params, const Vocabulary& vocab, const Arena& arena,
                     const EnvConfig& config, const ActionRegistry& registry, std::uint64_t seed) {
    const Navigator navigator(arena, config);
    return rollout(navigator, policy_source(params, vocab), registry, seed);
}

// ---------------------------------------------------------------------------
// Suites

namespace {

constexpr double kArenaSize = 15.0;
constexpr double kEdgeClearance = 1.5;
constexpr double kObstacleClearance = 1.0;
constexpr double kMaxRoute = 15.0;

Rect random_obstacle(Rng& rng, Vec2 center) {
    const double w = rng.uniform(1.0, 3.5);
    const double h = rng.uniform(1.0, 3.5);
    return {center.x - w / 2, center.y - h / 2, center.x + w / 2, center.y + h / 2};
}

std::optional<Arena> try_make_arena(Rng& rng, Difficulty difficulty, const EnvConfig& config) {
    Arena a;
    a.difficulty = difficulty;
    a.bounds = {0.0, 0.0, kArenaSize, kArenaSize};
    const double lo = kEdgeClearance, hi = kArenaSize - kEdgeClearance;
    a.start = {rng.uniform(lo, hi), rng.uniform(lo, hi), rng.uniform(-kPi, kPi)};
    const double dist = rng.uniform(5.0, 11.0);
    const double ang = rng.uniform(-kPi, kPi);
    a.goal = {a.start.x + dist * std::cos(ang), a.start.y + dist * std::sin(ang)};
    if (a.goal.x < lo || a.goal.x > hi || a.goal.y < lo || a.goal.y > hi) {
        return std::nullopt;
    }

    int n_obstacles = 0;
    if (difficulty == Difficulty::medium) n_obstacles = rng.range(1, 2);
    if (difficulty == Difficulty::hard) n_obstacles = rng.range(3, 5);
    const Vec2 mid{(a.start.x + a.goal.x) / 2, (a.start.y + a.goal.y) / 2};
    for (int k = 0; k < n_obstacles; ++k) {
        const Vec2 c = k == 0 ? Vec2{mid.x + rng.normal(0.0, 0.8), mid.y + rng.normal(0.0, 0.8)}
                              : Vec2{rng.uniform(1.0, kArenaSize - 1.0), rng.uniform(1.0, kArenaSize - 1.0)};
        a.obstacles.push_back(random_obstacle(rng, c));
    }
    for (const auto& r : a.obstacles) {
        if (r.distance_to(a.start.position()) < kObstacleClearance || r.distance_to(a.goal) < kObstacleClearance) {
            return std::nullopt;
        }
    }

    if (difficulty == Difficulty::hard) {
        a.instruction_id = rng.range(1, 3);
        if (a.instruction_id == 2) {
            a.required_behaviors.push_back({"unload", a.goal, 0.5 * config.success_radius});
        } else {
            const GridPlanner planner(a, Navigator::kGridResolution, Navigator::kPlannerClearance);
            const auto route = planner.path(a.start.position(), a.goal);
            if (route.size() < 3) {
                return std::nullopt;
            }
            const double frac = a.instruction_id == 1 ? 0.5 : 0.4;
            const Vec2 c = route[static_cast<std::size_t>(frac * static_cast<double>(route.size() - 1))];
            a.required_behaviors.push_back({a.instruction_id == 1 ? "crawl" : "distinguish", c, 1.0});
        }
    }

    const Navigator nav(a, config);
    const double route = nav.route_length();
    if (!std::isfinite(route) || route > kMaxRoute) {
        return std::nullopt;
    }
    return a;
}

}  // namespace

std::vector<Arena> make_arena_suite(std::uint64_t seed, std::size_t n, Difficulty difficulty,
                                    const EnvConfig& config) {
    if (n < 1) {
        throw std::invalid_argument("arena suite size must be >= 1");
    }
    config.validate();
    std::vector<Arena> suite;
    suite.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(difficulty) + 1, k));
        std::optional<Arena> arena;
        for (int attempt = 0; attempt < 10000 && !arena; ++attempt) {
            arena = try_make_arena(rng, difficulty, config);
        }
        if (!arena) {
            throw std::runtime_error("failed to generate a feasible arena");
        }
        arena->id = std::string(to_string(difficulty)) + "-" + std::to_string(seed) + "-" + std::to_string(k);
        suite.push_back(std::move(*arena));
    }
    return suite;
}

}  // namespace mvla::env
