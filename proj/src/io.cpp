#include "mvla/io.hpp"

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace mvla::io {

namespace {

Json rect_json(const env::Rect& r) { return Json::array({r.x_min, r.y_min, r.x_max, r.y_max}); }

env::Rect rect_from(const Json& j) {
    if (!j.is_array() || j.size() != 4) {
        throw std::runtime_error("rectangle must be [x_min, y_min, x_max, y_max]");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

Json pose_json(const env::Pose& p) { return Json::array({p.x, p.y, p.yaw}); }

env::Pose pose_from(const Json& j) {
    if (!j.is_array() || j.size() != 3) {
        throw std::runtime_error("pose must be [x, y, yaw]");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

Json command_json(const ControlCommand& c) { return Json::array({c.vx, c.vy, c.wyaw, c.action}); }

ControlCommand command_from(const Json& j) {
    if (!j.is_array() || j.size() != 4) {
        throw std::runtime_error("command must be [vx, vy, wyaw, action]");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<std::string>()};
}

Json state_json(const env::AgentState& s) {
    return Json::array({s.x, s.y, s.yaw, s.collided, s.step_index, s.behaviors_done});
}

env::AgentState state_from(const Json& j) {
    if (!j.is_array() || j.size() != 6) {
        throw std::runtime_error("state must be [x, y, yaw, collided, step, behaviors_done]");
    }
    env::AgentState s;
    s.x = j[0].get<double>();
    s.y = j[1].get<double>();
    s.yaw = j[2].get<double>();
    s.collided = j[3].get<bool>();
    s.step_index = j[4].get<int>();
    s.behaviors_done = j[5].get<int>();
    return s;
}

template <typename F>
auto guarded(const char* what, F&& f) {
    try {
        return f();
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error(std::string("malformed ") + what + ": " + e.what());
    }
}

}  // namespace

Json to_json(const env::Arena& a) {
    Json j;
    j["id"] = a.id;
    j["difficulty"] = env::to_string(a.difficulty);
    j["bounds"] = rect_json(a.bounds);
    j["obstacles"] = Json::array();
    for (const auto& r : a.obstacles) {
        j["obstacles"].push_back(rect_json(r));
    }
    j["start"] = pose_json(a.start);
    j["goal"] = Json::array({a.goal.x, a.goal.y});
    j["instruction_id"] = a.instruction_id;
    j["behaviors"] = Json::array();
    for (const auto& z : a.required_behaviors) {
        j["behaviors"].push_back({{"label", z.label}, {"center", {z.center.x, z.center.y}}, {"radius", z.radius}});
    }
    return j;
}

env::Arena arena_from_json(const Json& j) {
    return guarded("arena", [&] {
        env::Arena a;
        a.id = j.at("id").get<std::string>();
        a.difficulty = env::difficulty_from_string(j.at("difficulty").get<std::string>());
        a.bounds = rect_from(j.at("bounds"));
        for (const auto& r : j.at("obstacles")) {
            a.obstacles.push_back(rect_from(r));
        }
        a.start = pose_from(j.at("start"));
        a.goal = {j.at("goal").at(0).get<double>(), j.at("goal").at(1).get<double>()};
        a.instruction_id = j.at("instruction_id").get<int>();
        for (const auto& z : j.at("behaviors")) {
            a.required_behaviors.push_back({z.at("label").get<std::string>(),
                                            {z.at("center").at(0).get<double>(), z.at("center").at(1).get<double>()},
                                            z.at("radius").get<double>()});
        }
        return a;
    });
}

void write_suite(std::ostream& out, const std::vector<env::Arena>& arenas) {
    Json j;
    j["format"] = "mvla-arena-suite";
    j["version"] = 1;
    j["arenas"] = Json::array();
    for (const auto& a : arenas) {
        j["arenas"].push_back(to_json(a));
    }
    out << j.dump(1) << "\n";
}

std::vector<env::Arena> read_suite(std::istream& in) {
    return guarded("arena suite", [&] {
        const Json j = Json::parse(in);
        if (j.at("format") != "mvla-arena-suite" || j.at("version") != 1) {
            throw std::runtime_error("not a version 1 arena suite");
        }
        std::vector<env::Arena> out;
        for (const auto& a : j.at("arenas")) {
            out.push_back(arena_from_json(a));
        }
        return out;
    });
}

Json to_json(const env::EpisodeTrace& t) {
    Json j;
    j["arena_id"] = t.arena_id;
    j["terminated_by"] = env::to_string(t.terminated_by);
    j["poses"] = Json::array();
    for (const auto& p : t.poses) {
        j["poses"].push_back(pose_json(p));
    }
    j["commands"] = Json::array();
    for (const auto& c : t.commands) {
        j["commands"].push_back(command_json(c));
    }
    j["raw_responses"] = t.raw_responses;
    j["format_ok"] = t.format_ok;
    j["behaviors_emitted"] = t.behaviors_emitted;
    j["states"] = Json::array();
    for (const auto& s : t.states) {
        j["states"].push_back(state_json(s));
    }
    return j;
}

env::EpisodeTrace trace_from_json(const Json& j) {
    return guarded("trace", [&] {
        env::EpisodeTrace t;
        t.arena_id = j.at("arena_id").get<std::string>();
        t.terminated_by = env::termination_from_string(j.at("terminated_by").get<std::string>());
        for (const auto& p : j.at("poses")) {
            t.poses.push_back(pose_from(p));
        }
        for (const auto& c : j.at("commands")) {
            t.commands.push_back(command_from(c));
        }
        t.raw_responses = j.at("raw_responses").get<std::vector<std::string>>();
        t.format_ok = j.at("format_ok").get<std::vector<bool>>();
        t.behaviors_emitted = j.at("behaviors_emitted").get<std::vector<std::string>>();
        for (const auto& s : j.at("states")) {
            t.states.push_back(state_from(s));
        }
        if (t.poses.size() != t.commands.size() + 1) {
            throw std::runtime_error("trace " + t.arena_id + " has inconsistent pose and command counts");
        }
        return t;
    });
}

void write_traces(std::ostream& out, const std::vector<env::EpisodeTrace>& traces) {
    for (const auto& t : traces) {
        out << to_json(t).dump() << "\n";
    }
}

std::vector<env::EpisodeTrace> read_traces(std::istream& in) {
    std::vector<env::EpisodeTrace> out;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty()) {
            out.push_back(guarded("trace line", [&] { return trace_from_json(Json::parse(line)); }));
        }
    }
    return out;
}

Json to_json(const metrics::MetricReport& r) {
    Json j;
    j["arena_id"] = r.arena_id;
    j["difficulty"] = env::to_string(r.difficulty);
    j["ne"] = r.ne;
    j["os"] = r.os;
    j["sr"] = r.sr;
    j["spl"] = r.spl;
    j["ndtw"] = r.ndtw;
    j["path_length"] = r.path_length;
    j["geodesic"] = r.geodesic;
    j["behavior_match"] = r.behavior_match;
    return j;
}

Json to_json(const metrics::SummaryRow& r) {
    Json j;
    j["episodes"] = r.episodes;
    j["ne"] = r.ne;
    j["os"] = r.os;
    j["sr"] = r.sr;
    j["spl"] = r.spl;
    j["ndtw"] = r.ndtw;
    j["behavior_match"] = r.behavior_match;
    return j;
}

Json to_json(const metrics::Summary& s) {
    Json j;
    j["overall"] = to_json(s.overall);
    j["by_difficulty"] = Json::object();
    for (const auto& [d, row] : s.by_difficulty) {
        j["by_difficulty"][std::string(env::to_string(d))] = to_json(row);
    }
    return j;
}

void write_checkpoint(std::ostream& out, const Checkpoint& c) {
    const PolicyConfig& cfg = c.params.config();
    Json j;
    j["format"] = "mvla-checkpoint";
    j["version"] = kCheckpointVersion;
    j["stage"] = c.stage;
    j["seed"] = c.seed;
    j["vocab_digest"] = c.vocab_digest;
    j["registry_digest"] = c.registry_digest;
    j["registry"] = c.registry;
    j["vocab_size"] = c.params.vocab_size();
    j["config"] = {{"feature_dim", cfg.feature_dim},
                   {"embed_dim", cfg.embed_dim},
                   {"hidden_dim", cfg.hidden_dim},
                   {"max_length", cfg.max_length},
                   {"init_scale", cfg.init_scale}};
    j["tensors"] = Json::array();
    for (const auto& t : c.params.tensors()) {
        const auto data = c.params.data().subspan(t.offset, t.rows * t.cols);
        j["tensors"].push_back({{"name", t.name},
                                {"rows", t.rows},
                                {"cols", t.cols},
                                {"data", std::vector<double>(data.begin(), data.end())}});
    }
    out << j.dump() << "\n";
}

Checkpoint read_checkpoint(std::istream& in) {
    return guarded("checkpoint", [&] {
        const Json j = Json::parse(in);
        if (j.at("format") != "mvla-checkpoint") {
            throw std::runtime_error("not a checkpoint file");
        }
        if (j.at("version") != kCheckpointVersion) {
            throw std::runtime_error("unsupported checkpoint version " + j.at("version").dump());
        }
        Checkpoint c;
        c.stage = j.at("stage").get<std::string>();
        c.seed = j.at("seed").get<std::uint64_t>();
        c.vocab_digest = j.at("vocab_digest").get<std::string>();
        c.registry_digest = j.at("registry_digest").get<std::string>();
        c.registry = j.at("registry").get<std::vector<std::string>>();
        PolicyConfig cfg;
        const Json& jc = j.at("config");
        cfg.feature_dim = jc.at("feature_dim").get<std::size_t>();
        cfg.embed_dim = jc.at("embed_dim").get<std::size_t>();
        cfg.hidden_dim = jc.at("hidden_dim").get<std::size_t>();
        cfg.max_length = jc.at("max_length").get<std::size_t>();
        cfg.init_scale = jc.at("init_scale").get<double>();
        c.params = PolicyParams(cfg, j.at("vocab_size").get<std::size_t>());
        const auto& tensors = j.at("tensors");
        if (tensors.size() != c.params.tensors().size()) {
            throw std::runtime_error("checkpoint has " + std::to_string(tensors.size()) + " tensors, expected " +
                                     std::to_string(c.params.tensors().size()));
        }
        for (std::size_t i = 0; i < tensors.size(); ++i) {
            const auto& t = c.params.tensors()[i];
            const auto& jt = tensors[i];
            if (jt.at("name").get<std::string>() != t.name || jt.at("rows").get<std::size_t>() != t.rows ||
                jt.at("cols").get<std::size_t>() != t.cols) {
                throw std::runtime_error("tensor " + std::string(t.name) + " does not match the configured shape");
            }
            const auto data = jt.at("data").get<std::vector<double>>();
            if (data.size() != t.rows * t.cols) {
                throw std::runtime_error("tensor " + std::string(t.name) + " has the wrong element count");
            }
            std::copy(data.begin(), data.end(), c.params.data().begin() + static_cast<std::ptrdiff_t>(t.offset));
        }
        if (!c.params.all_finite()) {
            throw std::runtime_error("checkpoint contains non-finite parameters");
        }
        return c;
    });
}

void check_compatible(const Checkpoint& c, const Vocabulary& vocab, const ActionRegistry& registry) {
    if (c.vocab_digest != vocab.digest()) {
        throw CheckpointMismatch("checkpoint vocabulary digest " + c.vocab_digest + " does not match " +
                                 vocab.digest());
    }
    if (c.registry_digest != registry.digest()) {
        throw CheckpointMismatch("checkpoint action-registry digest " + c.registry_digest + " does not match " +
                                 registry.digest());
    }
    if (c.params.vocab_size() != vocab.size()) {
        throw CheckpointMismatch("checkpoint vocabulary size differs");
    }
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out || !(out << contents) || !out.flush()) {
        throw std::runtime_error("cannot write " + path.string());
    }
}

}  // namespace mvla::io
