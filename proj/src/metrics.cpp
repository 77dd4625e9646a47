#include "mvla/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <queue>
#include <stdexcept>

namespace mvla::metrics {

double navigation_error(const env::EpisodeTrace& trace, Vec2 goal) {
    if (trace.poses.empty()) {
        throw std::invalid_argument("trace has no poses");
    }
    return env::distance(trace.poses.back().position(), goal);
}

Success success_and_oracle(const env::EpisodeTrace& trace, Vec2 goal, double radius) {
    if (!(radius > 0.0)) {
        throw std::invalid_argument("success radius must be positive");
    }
    Success s;
    s.sr = navigation_error(trace, goal) < radius && trace.terminated_by == env::Termination::stop_action;
    double closest = std::numeric_limits<double>::infinity();
    for (const auto& p : trace.poses) {
        closest = std::min(closest, env::distance(p.position(), goal));
    }
    s.os = closest < radius;
    return s;
}

// Dijkstra over the 8-connected free lattice with line-of-sight parent
// relaxation: a node may inherit its parent's parent when the straight
// segment is clear, so oblique routes are not charged lattice zig-zags.
double geodesic_distance(const env::Arena& arena, Vec2 a, Vec2 b, double resolution) {
    for (const auto& r : arena.obstacles) {
        if (r.contains_interior(a) || r.contains_interior(b)) {
            throw std::invalid_argument("geodesic endpoint lies inside an obstacle");
        }
    }
    if (!arena.bounds.contains(a) || !arena.bounds.contains(b)) {
        throw std::invalid_argument("geodesic endpoint lies outside the arena");
    }
    const env::GridPlanner grid(arena, resolution, 0.0);
    const auto clear = [&](Vec2 p, Vec2 q) { return grid.segment_clear(p, q, 0.0); };
    if (clear(a, b)) {
        return env::distance(a, b);
    }
    const std::size_t n = grid.nx() * grid.ny();
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> dist(n, inf);
    std::vector<Vec2> parent(n);
    std::vector<double> parent_dist(n, 0.0);
    using Item = std::pair<double, std::size_t>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> queue;
    for (std::size_t idx = 0; idx < n; ++idx) {
        const Vec2 p = grid.node_position(idx);
        if (grid.node_free(idx) && clear(b, p)) {
            dist[idx] = env::distance(b, p);
            parent[idx] = b;
            queue.emplace(dist[idx], idx);
        }
    }
    const int di[8] = {1, -1, 0, 0, 1, 1, -1, -1};
    const int dj[8] = {0, 0, 1, -1, 1, -1, 1, -1};
    while (!queue.empty()) {
        const auto [d, idx] = queue.top();
        queue.pop();
        if (d > dist[idx]) {
            continue;
        }
        const long i = static_cast<long>(idx % grid.nx()), j = static_cast<long>(idx / grid.nx());
        const Vec2 p = grid.node_position(idx);
        for (int k = 0; k < 8; ++k) {
            const long ni = i + di[k], nj = j + dj[k];
            if (ni < 0 || nj < 0 || ni >= static_cast<long>(grid.nx()) || nj >= static_cast<long>(grid.ny())) {
                continue;
            }
            const std::size_t next = grid.index(static_cast<std::size_t>(ni), static_cast<std::size_t>(nj));
            const Vec2 q = grid.node_position(next);
            if (!grid.node_free(next) || !clear(p, q)) {
                continue;
            }
            double cand = d + (k < 4 ? 1.0 : std::numbers::sqrt2) * resolution;
            Vec2 via = p;
            double via_dist = d;
            if (clear(parent[idx], q)) {
                cand = parent_dist[idx] + env::distance(parent[idx], q);
                via = parent[idx];
                via_dist = parent_dist[idx];
            }
            if (cand < dist[next]) {
                dist[next] = cand;
                parent[next] = via;
                parent_dist[next] = via_dist;
                queue.emplace(cand, next);
            }
        }
    }
    double best = inf;
    for (std::size_t idx = 0; idx < n; ++idx) {
        if (std::isfinite(dist[idx])) {
            const Vec2 p = grid.node_position(idx);
            const double total = dist[idx] + env::distance(a, p);
            if (total < best && clear(a, p)) {
                best = total;
            }
        }
    }
    return best;
}

double path_length(std::span<const Vec2> points) {
    double total = 0.0;
    for (std::size_t i = 1; i < points.size(); ++i) {
        total += env::distance(points[i - 1], points[i]);
    }
    return total;
}

double spl(bool sr, double geodesic, double path_length) {
    if (!(geodesic > 0.0)) {
        throw std::invalid_argument("SPL needs a positive geodesic distance");
    }
    if (!sr) {
        return 0.0;
    }
    return geodesic / std::max(path_length, geodesic);
}

double dtw(std::span<const Vec2> a, std::span<const Vec2> b) {
    if (a.empty() || b.empty()) {
        throw std::invalid_argument("DTW needs non-empty trajectories");
    }
    const std::size_t m = a.size(), n = b.size();
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> prev(n + 1, inf), cur(n + 1, inf);
    prev[0] = 0.0;
    for (std::size_t i = 1; i <= m; ++i) {
        cur[0] = inf;
        for (std::size_t j = 1; j <= n; ++j) {
            const double cost = env::distance(a[i - 1], b[j - 1]);
            cur[j] = cost + std::min({prev[j - 1], prev[j], cur[j - 1]});
        }
        std::swap(prev, cur);
    }
    return prev[n];
}

double ndtw(std::span<const Vec2> trace, std::span<const Vec2> reference, double d_threshold) {
    if (!(d_threshold > 0.0)) {
        throw std::invalid_argument("nDTW threshold must be positive");
    }
    return std::exp(-dtw(trace, reference) / (static_cast<double>(reference.size()) * d_threshold));
}

bool behaviors_in_order(std::span<const std::string> emitted, std::span<const std::string> required) {
    std::size_t k = 0;
    for (const auto& label : emitted) {
        if (k < required.size() && label == required[k]) {
            ++k;
        }
    }
    return k == required.size();
}

MetricReport evaluate_episode(const env::EpisodeTrace& trace, const env::Arena& arena,
                              std::span<const Vec2> reference, const MetricConfig& config) {
    MetricReport r;
    r.arena_id = arena.id;
    r.difficulty = arena.difficulty;
    const auto points = trace.positions();
    r.ne = navigation_error(trace, arena.goal);
    const Success s = success_and_oracle(trace, arena.goal, config.success_radius);
    r.sr = s.sr;
    r.os = s.os;
    r.path_length = path_length(points);
    r.geodesic = geodesic_distance(arena, arena.start.position(), arena.goal, config.grid_resolution);
    r.spl = spl(r.sr, r.geodesic, r.path_length);
    r.ndtw = ndtw(points, reference, config.ndtw_threshold);
    const auto required = arena.required_labels();
    r.behavior_match = behaviors_in_order(trace.behaviors_emitted, required);
    return r;
}

namespace {

void accumulate(SummaryRow& row, const MetricReport& r) {
    row.episodes += 1;
    row.ne += r.ne;
    row.os += r.os ? 1.0 : 0.0;
    row.sr += r.sr ? 1.0 : 0.0;
    row.spl += r.spl;
    row.ndtw += r.ndtw;
    row.behavior_match += r.behavior_match ? 1.0 : 0.0;
}

void finish(SummaryRow& row) {
    const double n = static_cast<double>(row.episodes);
    row.ne /= n;
    row.os /= n;
    row.sr /= n;
    row.spl /= n;
    row.ndtw /= n;
    row.behavior_match /= n;
}

}  // namespace

Summary aggregate(std::span<const MetricReport> reports) {
    if (reports.empty()) {
        throw std::invalid_argument("cannot aggregate zero reports");
    }
    Summary s;
    for (const auto& r : reports) {
        accumulate(s.overall, r);
        accumulate(s.by_difficulty[r.difficulty], r);
    }
    finish(s.overall);
    for (auto& [d, row] : s.by_difficulty) {
        finish(row);
    }
    return s;
}

std::string format_table(const Summary& summary, const std::string& title) {
    std::string out;
    if (!title.empty()) {
        out += title + "\n";
    }
    // Right-align by code points so the arrow glyphs do not skew columns.
    const auto cell = [](std::string_view text, std::size_t width) {
        std::size_t glyphs = 0;
        for (unsigned char c : text) {
            glyphs += (c & 0xC0) != 0x80 ? 1 : 0;
        }
        return std::string(width > glyphs ? width - glyphs : 0, ' ') + std::string(text);
    };
    out += "split    " + cell("n", 5);
    for (std::string_view h : {"NE↓", "OS↑", "SR↑", "SPL↑", "nDTW↑", "Behav↑"}) {
        out += " " + cell(h, 7);
    }
    out += "\n";
    char buf[160];
    const auto row = [&](const std::string& name, const SummaryRow& r) {
        std::snprintf(buf, sizeof buf, "%-8s %5zu %7.3f %7.3f %7.3f %7.3f %7.3f %7.3f\n", name.c_str(), r.episodes,
                      r.ne, r.os, r.sr, r.spl, r.ndtw, r.behavior_match);
        out += buf;
    };
    for (const auto& [d, r] : summary.by_difficulty) {
        row(std::string(env::to_string(d)), r);
    }
    row("all", summary.overall);
    return out;
}

}  // namespace mvla::metrics
