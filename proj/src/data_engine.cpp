#include "mvla/data_engine.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

#include "mvla/rng.hpp"

namespace mvla::data {

using nlohmann::ordered_json;

std::string_view to_string(Granularity g) {
    switch (g) {
        case Granularity::episode: return "episode";
        case Granularity::step: return "step";
        case Granularity::nav: return "nav";
    }
    return "step";
}

Granularity granularity_from_string(std::string_view name) {
    for (Granularity g : kAllGranularities) {
        if (to_string(g) == name) {
            return g;
        }
    }
    throw std::invalid_argument("unknown granularity: " + std::string(name));
}

// ---------------------------------------------------------------------------
// Episode contexts

std::vector<EpisodePtr> collect_oracle_episodes(const std::vector<env::Arena>& arenas, const env::EnvConfig& config,
                                                const ActionRegistry& registry) {
    std::vector<EpisodePtr> out;
    out.reserve(arenas.size());
    for (const env::Arena& arena : arenas) {
        const env::Navigator nav(arena, config);
        const env::EpisodeTrace trace = env::rollout(nav, env::oracle_source(nav), registry, 0);
        auto ctx = std::make_shared<EpisodeContext>();
        ctx->episode_id = arena.id;
        ctx->arena = arena;
        ctx->instruction = std::string(env::instruction_text(arena.instruction_id));
        ctx->poses = trace.poses;
        for (std::size_t k = 0; k < trace.commands.size(); ++k) {
            const env::AgentState& s = trace.states[k];
            const env::OracleDecision d = nav.oracle(s);
            ctx->states.push_back(s);
            ctx->observations.push_back(nav.observe(s));
            ctx->maneuvers.push_back(d.maneuver);
            ctx->thinks.push_back(d.think);
            ctx->commands.push_back(d.command);
        }
        const env::Pose& last = trace.poses.back();
        ctx->reached = trace.terminated_by == env::Termination::stop_action &&
                       env::distance(last.position(), arena.goal) < config.success_radius;
        out.push_back(std::move(ctx));
    }
    return out;
}

namespace {

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

std::string pose_digest(const env::Pose& p) {
    return fixed(p.x, 3) + "," + fixed(p.y, 3) + "," + fixed(p.yaw, 3);
}

}  // namespace

std::string observation_digest(const ObservationContext& obs) {
    std::string out;
    for (std::size_t i = 0; i < obs.features.size(); ++i) {
        if (i) {
            out += ',';
        }
        out += fixed(obs.features[i], 6);
    }
    return out;
}

std::vector<double> parse_observation_digest(std::string_view digest) {
    std::vector<double> out;
    if (digest.empty()) {
        return out;
    }
    std::size_t pos = 0;
    while (true) {
        const std::size_t comma = digest.find(',', pos);
        const std::string_view field = digest.substr(pos, comma == std::string_view::npos ? digest.npos : comma - pos);
        double v = 0.0;
        const auto [end, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
        if (ec != std::errc{} || end != field.data() + field.size()) {
            throw std::runtime_error("bad observation digest field: " + std::string(field));
        }
        out.push_back(v);
        if (comma == std::string_view::npos) {
            break;
        }
        pos = comma + 1;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Prompts

TeacherRequest build_prompt(Granularity granularity, const EpisodePtr& episode,
                            std::optional<std::size_t> step_index) {
    if (!episode) {
        throw std::invalid_argument("prompt needs an episode context");
    }
    const EpisodeContext& ep = *episode;
    if (ep.poses.empty() || ep.states.size() != ep.commands.size() || ep.observations.size() != ep.commands.size() ||
        ep.thinks.size() != ep.commands.size() || ep.maneuvers.size() != ep.commands.size()) {
        throw std::invalid_argument("episode context " + ep.episode_id + " is incomplete");
    }
    TeacherRequest req;
    req.granularity = granularity;
    req.instruction = ep.instruction;
    req.episode = episode;

    std::ostringstream prompt;
    prompt << "You are guiding a legged robot in a 2D arena.\n";
    prompt << "instruction: " << ep.instruction << "\n";
    prompt << "goal: " << fixed(ep.arena.goal.x, 3) << "," << fixed(ep.arena.goal.y, 3) << "\n";

    if (granularity == Granularity::step) {
        if (!step_index || *step_index >= ep.commands.size()) {
            throw std::invalid_argument("step prompt for " + ep.episode_id + " needs a step index");
        }
        const std::size_t k = *step_index;
        req.step_index = k;
        req.request_id = ep.episode_id + ":step:" + std::to_string(k);
        req.pose_digest = pose_digest(ep.states[k].pose());
        req.observation_digest = observation_digest(ep.observations[k]);
        prompt << "step: " << k << " of " << ep.commands.size() << "\n";
        prompt << "pose: " << req.pose_digest << "\n";
        prompt << "observation: " << req.observation_digest << "\n";
        prompt << "Reply as <think>reasoning</think><answer>vx=F vy=F wyaw=F action=LABEL</answer>.\n";
    } else {
        req.request_id = ep.episode_id + ":" + std::string(to_string(granularity));
        req.pose_digest = pose_digest(ep.poses.front());
        req.observation_digest = ep.observations.empty() ? "" : observation_digest(ep.observations.front());
        prompt << "start: " << req.pose_digest << "\n";
        prompt << "trajectory:";
        for (const env::Pose& p : ep.poses) {
            prompt << " (" << fixed(p.x, 2) << "," << fixed(p.y, 2) << ")";
        }
        prompt << "\n";
        if (granularity == Granularity::episode) {
            prompt << "Summarize the episode as <think>reasoning</think><answer>goal reached|goal missed</answer>.\n";
        } else {
            prompt << "Describe the route as <think>reasoning</think><answer>action labels in order</answer>.\n";
        }
    }
    req.prompt = prompt.str();
    return req;
}

// ---------------------------------------------------------------------------
// Mock teacher

namespace {

template <typename T>
std::vector<T> compress_runs(const std::vector<T>& items) {
    std::vector<T> out;
    for (const T& x : items) {
        if (out.empty() || !(out.back() == x)) {
            out.push_back(x);
        }
    }
    return out;
}

constexpr std::size_t kMaxSummaryPhrases = 4;

std::string summary_think(const EpisodeContext& ep) {
    std::vector<Maneuver> runs = compress_runs(ep.maneuvers);
    if (runs.size() > kMaxSummaryPhrases) {
        std::vector<Maneuver> kept(runs.begin(), runs.begin() + (kMaxSummaryPhrases - 1));
        kept.push_back(runs.back());
        runs = std::move(kept);
    }
    std::string out;
    for (Maneuver m : runs) {
        if (!out.empty()) {
            out += kPhraseSeparator;
        }
        out += think_phrase(m);
    }
    if (out.empty()) {
        out = think_phrase(Maneuver::stop);
    }
    return out;
}

std::string route_labels(const EpisodeContext& ep) {
    std::vector<std::string> labels;
    for (const ControlCommand& c : ep.commands) {
        labels.push_back(c.action);
    }
    std::string out;
    for (const std::string& l : compress_runs(labels)) {
        if (!out.empty()) {
            out += kPhraseSeparator;
        }
        out += l;
    }
    return out.empty() ? std::string(kStopLabel) : out;
}

}  // namespace

std::string oracle_annotation(const TeacherRequest& request) {
    if (!request.episode) {
        throw std::invalid_argument("request without an episode");
    }
    const EpisodeContext& ep = *request.episode;
    switch (request.granularity) {
        case Granularity::step: {
            const std::size_t k = request.step_index.value();
            return serialize(ep.thinks.at(k), ep.commands.at(k));
        }
        case Granularity::episode:
            return serialize_free(summary_think(ep), ep.reached ? kGoalReached : kGoalMissed);
        case Granularity::nav:
            return serialize_free(summary_think(ep), route_labels(ep));
    }
    return {};
}

MockTeacher::MockTeacher(std::uint64_t seed, double malform_rate, VelocityLimits limits)
    : seed_(seed), malform_rate_(malform_rate), limits_(limits) {
    if (!(malform_rate >= 0.0 && malform_rate <= 1.0)) {
        throw std::invalid_argument("malform_rate must lie in [0, 1]");
    }
}

Malformation MockTeacher::malformation_for(const TeacherRequest& request) const {
    Rng rng(derive_seed(seed_, fnv1a64(request.request_id)));
    if (!rng.bernoulli(malform_rate_)) {
        return Malformation::none;
    }
    if (request.granularity == Granularity::step) {
        static constexpr Malformation kinds[] = {Malformation::missing_tag, Malformation::bad_action,
                                                 Malformation::out_of_range_velocity, Malformation::trailing_garbage};
        return kinds[rng.below(4)];
    }
    static constexpr Malformation kinds[] = {Malformation::missing_tag, Malformation::trailing_garbage};
    return kinds[rng.below(2)];
}

TeacherResponse MockTeacher::complete(const TeacherRequest& request) {
    std::string raw = oracle_annotation(request);
    const Malformation m = malformation_for(request);
    switch (m) {
        case Malformation::none: break;
        case Malformation::missing_tag: raw.erase(raw.rfind(kAnswerClose)); break;
        case Malformation::bad_action: {
            const std::size_t at = raw.find("action=") + 7;
            raw.replace(at, raw.find(kAnswerClose) - at, "fly");
            break;
        }
        case Malformation::out_of_range_velocity: {
            const std::size_t at = raw.find("vx=") + 3;
            raw.replace(at, raw.find(' ', at) - at, format_velocity(limits_.v_max + 0.5));
            break;
        }
        case Malformation::trailing_garbage: raw += " extra"; break;
    }
    TeacherResponse resp;
    resp.raw = std::move(raw);
    resp.teacher_id = id();
    resp.ground_truth_valid = m == Malformation::none;
    return resp;
}

// ---------------------------------------------------------------------------
// Process teacher

namespace {
constexpr int kProcessTimeoutMs = 30000;
}

ProcessTeacher::ProcessTeacher(std::string command) : command_(std::move(command)) {
    if (command_.empty()) {
        throw std::invalid_argument("teacher command is empty");
    }
    ::signal(SIGPIPE, SIG_IGN);
}

ProcessTeacher::~ProcessTeacher() { stop(); }

void ProcessTeacher::start() {
    int in_pipe[2], out_pipe[2];
    if (::pipe(in_pipe) != 0) {
        throw TeacherError("pipe failed");
    }
    if (::pipe(out_pipe) != 0) {
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        throw TeacherError("pipe failed");
    }
    const pid_t pid = ::fork();
    if (pid < 0) {
        throw TeacherError("fork failed");
    }
    if (pid == 0) {
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::close(in_pipe[0]);
        ::close(in_pipe[1]);
        ::close(out_pipe[0]);
        ::close(out_pipe[1]);
        ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(in_pipe[0]);
    ::close(out_pipe[1]);
    ::fcntl(in_pipe[1], F_SETFD, FD_CLOEXEC);
    ::fcntl(out_pipe[0], F_SETFD, FD_CLOEXEC);
    pid_ = pid;
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
    buffer_.clear();
}

void ProcessTeacher::stop() {
    if (to_child_ >= 0) {
        ::close(to_child_);
        to_child_ = -1;
    }
    if (from_child_ >= 0) {
        ::close(from_child_);
        from_child_ = -1;
    }
    if (pid_ > 0) {
        ::kill(pid_, SIGTERM);
        ::waitpid(pid_, nullptr, 0);
        pid_ = -1;
    }
}

TeacherResponse ProcessTeacher::complete(const TeacherRequest& request) {
    std::lock_guard lock(mutex_);
    const auto t0 = std::chrono::steady_clock::now();
    if (pid_ < 0) {
        start();
    }
    ordered_json msg;
    msg["id"] = request.request_id;
    msg["granularity"] = to_string(request.granularity);
    msg["instruction"] = request.instruction;
    msg["prompt"] = request.prompt;
    const std::string line = msg.dump() + "\n";
    std::size_t written = 0;
    while (written < line.size()) {
        const ssize_t n = ::write(to_child_, line.data() + written, line.size() - written);
        if (n <= 0) {
            stop();
            throw TeacherError("teacher process closed its input");
        }
        written += static_cast<std::size_t>(n);
    }
    std::size_t nl;
    while ((nl = buffer_.find('\n')) == std::string::npos) {
        pollfd pfd{from_child_, POLLIN, 0};
        const int ready = ::poll(&pfd, 1, kProcessTimeoutMs);
        if (ready <= 0) {
            stop();
            throw TeacherError("teacher process timed out");
        }
        char chunk[4096];
        const ssize_t n = ::read(from_child_, chunk, sizeof chunk);
        if (n <= 0) {
            stop();
            throw TeacherError("teacher process exited");
        }
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
    const std::string reply = buffer_.substr(0, nl);
    buffer_.erase(0, nl + 1);
    TeacherResponse resp;
    try {
        const auto j = nlohmann::json::parse(reply);
        if (j.contains("error")) {
            throw TeacherError("teacher reported: " + j["error"].get<std::string>());
        }
        resp.raw = j.at("raw").get<std::string>();
        resp.teacher_id = j.value("teacher", id());
    } catch (const nlohmann::json::exception& e) {
        throw TeacherError(std::string("bad teacher reply: ") + e.what());
    }
    resp.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return resp;
}

// ---------------------------------------------------------------------------
// Synthesis

namespace {

TaggedText lenient_split(const std::string& raw) {
    const TagSplit strict = split_tags(raw);
    if (strict.parts) {
        return *strict.parts;
    }
    const std::size_t t0 = raw.find(kThinkOpen);
    const std::size_t t1 = t0 == raw.npos ? raw.npos : raw.find(kThinkClose, t0 + kThinkOpen.size());
    const std::size_t a0 = t1 == raw.npos ? raw.npos : raw.find(kAnswerOpen, t1 + kThinkClose.size());
    const std::size_t a1 = a0 == raw.npos ? raw.npos : raw.find(kAnswerClose, a0 + kAnswerOpen.size());
    if (a1 == raw.npos) {
        return {"", raw};
    }
    return {raw.substr(t0 + kThinkOpen.size(), t1 - t0 - kThinkOpen.size()),
            raw.substr(a0 + kAnswerOpen.size(), a1 - a0 - kAnswerOpen.size())};
}

struct Unit {
    EpisodePtr episode;
    std::optional<std::size_t> step;
};

CotSample run_unit(TeacherClient& teacher, const Unit& unit, Granularity granularity,
                   const SynthesisOptions& options) {
    const TeacherRequest request = build_prompt(granularity, unit.episode, unit.step);
    CotSample s;
    s.id = request.request_id;
    s.granularity = granularity;
    s.instruction = request.instruction;
    s.observation_digest = request.observation_digest;
    s.source_episode = unit.episode->episode_id;

    auto backoff = options.initial_backoff;
    for (int attempt = 1; attempt <= options.max_attempts; ++attempt) {
        s.attempts = attempt;
        try {
            TeacherResponse resp = teacher.complete(request);
            TaggedText parts = lenient_split(resp.raw);
            s.think = std::move(parts.think);
            s.answer = std::move(parts.answer);
            s.raw = std::move(resp.raw);
            s.teacher_label = resp.ground_truth_valid;
            return s;
        } catch (const TeacherError& e) {
            std::fprintf(stderr, "teacher attempt %d/%d for %s failed: %s\n", attempt, options.max_attempts,
                         s.id.c_str(), e.what());
            if (attempt < options.max_attempts) {
                std::this_thread::sleep_for(backoff);
                backoff *= 2;
            }
        }
    }
    s.verified = false;
    s.rejection_reason = std::string(kTeacherFailure);
    return s;
}

}  // namespace

std::vector<CotSample> synthesize(TeacherClient& teacher, const std::vector<EpisodePtr>& episodes,
                                  Granularity granularity, const SynthesisOptions& options) {
    if (options.max_attempts < 1) {
        throw std::invalid_argument("max_attempts must be >= 1");
    }
    std::vector<Unit> units;
    for (const EpisodePtr& ep : episodes) {
        if (!ep) {
            throw std::invalid_argument("null episode context");
        }
        if (granularity == Granularity::step) {
            for (std::size_t k = 0; k < ep->commands.size(); ++k) {
                units.push_back({ep, k});
            }
        } else {
            units.push_back({ep, std::nullopt});
        }
    }
    // Validate every prompt before any teacher traffic.
    for (const Unit& u : units) {
        (void)build_prompt(granularity, u.episode, u.step);
    }

    std::vector<CotSample> out(units.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < units.size(); i = next++) {
            out[i] = run_unit(teacher, units[i], granularity, options);
        }
    };
    const std::size_t n_threads = std::clamp<std::size_t>(options.concurrency, 1, std::max<std::size_t>(units.size(), 1));
    std::vector<std::thread> threads;
    for (std::size_t t = 1; t < n_threads; ++t) {
        threads.emplace_back(worker);
    }
    worker();
    for (std::thread& t : threads) {
        t.join();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Verification

Verification verify(const CotSample& sample, const ActionRegistry& registry, const VelocityLimits& limits) {
    if (sample.rejection_reason == kTeacherFailure) {
        return {false, std::string(kTeacherFailure)};
    }
    const std::string raw = sample.raw.empty() ? std::string(kThinkOpen) + sample.think + std::string(kThinkClose) +
                                                     std::string(kAnswerOpen) + sample.answer +
                                                     std::string(kAnswerClose)
                                               : sample.raw;
    if (sample.granularity == Granularity::step) {
        const FormatVerdict v = check_format(raw, registry, limits);
        return {v.valid, v.valid ? "" : std::string(to_string(v.failure_reason))};
    }
    const TagSplit split = split_tags(raw);
    if (!split.parts) {
        return {false, std::string(to_string(split.failure))};
    }
    if (is_blank(split.parts->answer)) {
        return {false, std::string(to_string(FormatFailure::unparseable_answer))};
    }
    return {true, ""};
}

std::vector<CotSample> DatasetManifest::accepted(std::optional<Granularity> granularity) const {
    std::vector<CotSample> out;
    for (const CotSample& s : samples) {
        if (s.verified && (!granularity || s.granularity == *granularity)) {
            out.push_back(s);
        }
    }
    return out;
}

namespace {

void tally(DatasetManifest& m) {
    m.counts.clear();
    m.rejection_log.clear();
    for (Granularity g : kAllGranularities) {
        m.counts[g] = {};
    }
    for (const CotSample& s : m.samples) {
        GranularityCounts& c = m.counts[s.granularity];
        ++c.total;
        if (s.verified) {
            ++c.accepted;
        } else {
            m.rejection_log.emplace_back(s.id, s.rejection_reason);
        }
    }
}

}  // namespace

DatasetManifest filter_dataset(std::vector<CotSample> samples, const ActionRegistry& registry,
                               const VelocityLimits& limits, std::uint64_t seed, std::string config_digest) {
    DatasetManifest m;
    m.seed = seed;
    m.config_digest = std::move(config_digest);
    for (CotSample& s : samples) {
        const Verification v = verify(s, registry, limits);
        s.verified = v.verified;
        s.rejection_reason = v.rejection_reason;
    }
    m.samples = std::move(samples);
    tally(m);
    return m;
}

DatasetStats stats(const DatasetManifest& manifest) {
    DatasetStats s;
    for (Granularity g : kAllGranularities) {
        s.counts[g] = {};
    }
    for (const CotSample& c : manifest.samples) {
        GranularityCounts& g = s.counts[c.granularity];
        ++g.total;
        ++s.total;
        if (c.verified) {
            ++g.accepted;
            ++s.accepted;
        } else {
            ++s.rejections[c.rejection_reason];
        }
    }
    s.acceptance_rate = s.total ? static_cast<double>(s.accepted) / static_cast<double>(s.total) : 0.0;
    return s;
}

std::string format_stats(const DatasetStats& s) {
    std::ostringstream out;
    out << "granularity  total  accepted\n";
    for (const auto& [g, c] : s.counts) {
        char buf[96];
        std::snprintf(buf, sizeof buf, "%-11s  %5zu  %8zu\n", std::string(to_string(g)).c_str(), c.total, c.accepted);
        out << buf;
    }
    out << "acceptance rate: " << fixed(s.acceptance_rate, 4) << " (" << s.accepted << "/" << s.total << ")\n";
    if (!s.rejections.empty()) {
        out << "rejections:\n";
        for (const auto& [reason, n] : s.rejections) {
            out << "  " << reason << ": " << n << "\n";
        }
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Manifest I/O

namespace {

constexpr std::string_view kManifestFormat = "mvla-cot-manifest";
constexpr int kManifestVersion = 1;

ordered_json counts_json(const std::map<Granularity, GranularityCounts>& counts) {
    ordered_json j = ordered_json::object();
    for (const auto& [g, c] : counts) {
        j[std::string(to_string(g))] = {{"total", c.total}, {"accepted", c.accepted}};
    }
    return j;
}

}  // namespace

void write_manifest(std::ostream& out, const DatasetManifest& manifest) {
    ordered_json header;
    header["type"] = "header";
    header["format"] = kManifestFormat;
    header["version"] = kManifestVersion;
    header["seed"] = manifest.seed;
    header["config_digest"] = manifest.config_digest;
    header["counts"] = counts_json(manifest.counts);
    out << header.dump() << "\n";
    for (const CotSample& s : manifest.samples) {
        ordered_json j;
        j["type"] = "sample";
        j["id"] = s.id;
        j["granularity"] = to_string(s.granularity);
        j["instruction"] = s.instruction;
        j["observation_digest"] = s.observation_digest;
        j["think"] = s.think;
        j["answer"] = s.answer;
        j["raw"] = s.raw;
        j["source_episode"] = s.source_episode;
        j["verified"] = s.verified;
        j["rejection_reason"] = s.rejection_reason;
        j["attempts"] = s.attempts;
        if (s.teacher_label) {
            j["teacher_label"] = *s.teacher_label;
        }
        out << j.dump() << "\n";
    }
}

DatasetManifest read_manifest(std::istream& in) {
    DatasetManifest m;
    std::string line;
    std::size_t line_no = 0;
    std::optional<ordered_json> header;
    try {
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) {
                continue;
            }
            const ordered_json j = ordered_json::parse(line);
            if (!header) {
                if (j.at("type") != "header" || j.at("format") != kManifestFormat) {
                    throw std::runtime_error("manifest must start with a header record");
                }
                if (j.at("version").get<int>() != kManifestVersion) {
                    throw std::runtime_error("unsupported manifest version");
                }
                m.seed = j.at("seed").get<std::uint64_t>();
                m.config_digest = j.at("config_digest").get<std::string>();
                header = j;
                continue;
            }
            if (j.at("type") != "sample") {
                throw std::runtime_error("unexpected record type");
            }
            CotSample s;
            s.id = j.at("id").get<std::string>();
            s.granularity = granularity_from_string(j.at("granularity").get<std::string>());
            s.instruction = j.at("instruction").get<std::string>();
            s.observation_digest = j.at("observation_digest").get<std::string>();
            s.think = j.at("think").get<std::string>();
            s.answer = j.at("answer").get<std::string>();
            s.raw = j.at("raw").get<std::string>();
            s.source_episode = j.at("source_episode").get<std::string>();
            s.verified = j.at("verified").get<bool>();
            s.rejection_reason = j.at("rejection_reason").get<std::string>();
            s.attempts = j.at("attempts").get<int>();
            if (j.contains("teacher_label")) {
                s.teacher_label = j["teacher_label"].get<bool>();
            }
            m.samples.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("manifest line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!header) {
        throw std::runtime_error("manifest is empty");
    }
    tally(m);
    if (counts_json(m.counts) != (*header)["counts"]) {
        throw std::runtime_error("manifest header counts do not match its records");
    }
    return m;
}

std::vector<CotSample> select_for_review(const DatasetManifest& manifest, std::size_t per_granularity,
                                         std::uint64_t seed) {
    std::vector<CotSample> out;
    for (Granularity g : kAllGranularities) {
        std::vector<CotSample> pool = manifest.accepted(g);
        Rng rng(derive_seed(seed, static_cast<std::uint64_t>(g)));
        for (std::size_t i = 0; i < pool.size() && i < per_granularity; ++i) {
            std::swap(pool[i], pool[i + rng.below(pool.size() - i)]);
            out.push_back(pool[i]);
        }
    }
    return out;
}

}  // namespace mvla::data
