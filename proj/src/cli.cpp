#include "mvla/cli.hpp"

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "mvla/data_engine.hpp"
#include "mvla/rng.hpp"

namespace mvla::cli {

namespace fs = std::filesystem;
using io::Json;

namespace {

// Failures the user can fix by changing the invocation; exit code 2.
class UsageError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

Json suite_json(const pipeline::SuiteSpec& s) { return {{"easy", s.easy}, {"medium", s.medium}, {"hard", s.hard}}; }

// Typed accessors that name the offending key.
class Reader {
  public:
    Reader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {}

    const Json& at(const char* key) const {
        if (!j_.contains(key)) {
            throw ConfigError("config key " + name(key) + " is missing");
        }
        return j_.at(key);
    }
    Reader object(const char* key) const {
        const Json& v = at(key);
        if (!v.is_object()) {
            throw ConfigError("config key " + name(key) + " must be an object");
        }
        return Reader(v, name(key));
    }
    std::size_t count(const char* key) const {
        const Json& v = at(key);
        if (!v.is_number_unsigned()) {
            throw ConfigError("config key " + name(key) + " must be a nonnegative integer");
        }
        return v.get<std::size_t>();
    }
    int integer(const char* key) const {
        const Json& v = at(key);
        if (!v.is_number_integer()) {
            throw ConfigError("config key " + name(key) + " must be an integer");
        }
        return v.get<int>();
    }
    double real(const char* key) const {
        const Json& v = at(key);
        if (!v.is_number()) {
            throw ConfigError("config key " + name(key) + " must be a number");
        }
        return v.get<double>();
    }
    std::string string(const char* key) const {
        const Json& v = at(key);
        if (!v.is_string()) {
            throw ConfigError("config key " + name(key) + " must be a string");
        }
        return v.get<std::string>();
    }
    std::vector<std::string> strings(const char* key) const {
        const Json& v = at(key);
        if (!v.is_array() || !std::all_of(v.begin(), v.end(), [](const Json& e) { return e.is_string(); })) {
            throw ConfigError("config key " + name(key) + " must be a list of strings");
        }
        return v.get<std::vector<std::string>>();
    }
    pipeline::SuiteSpec suite(const char* key) const {
        const Reader r = object(key);
        return {r.count("easy"), r.count("medium"), r.count("hard")};
    }

  private:
    std::string name(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    const Json& j_;
    std::string path_;
};

// Overwrites leaves of `base` with `patch`; every key must already exist.
void merge(Json& base, const Json& patch, const std::string& prefix) {
    if (!patch.is_object()) {
        throw ConfigError("config " + (prefix.empty() ? std::string("file") : "key " + prefix) +
                          " must be an object");
    }
    for (const auto& [key, value] : patch.items()) {
        const std::string path = prefix.empty() ? key : prefix + "." + key;
        if (!base.contains(key)) {
            throw ConfigError("unknown config key " + path);
        }
        if (base[key].is_object()) {
            merge(base[key], value, path);
        } else {
            base[key] = value;
        }
    }
}

void apply_override(Json& config, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw ConfigError("override '" + assignment + "' is not key=value");
    }
    const std::string key = assignment.substr(0, eq);
    const std::string text = assignment.substr(eq + 1);
    Json value = Json::parse(text, nullptr, false);
    if (value.is_discarded()) {
        value = text;
    }
    Json patch = value;
    std::string rest = key;
    std::vector<std::string> parts;
    for (std::size_t pos; (pos = rest.find('.')) != std::string::npos; rest = rest.substr(pos + 1)) {
        parts.push_back(rest.substr(0, pos));
    }
    parts.push_back(rest);
    for (auto it = parts.rbegin(); it != parts.rend(); ++it) {
        if (it->empty()) {
            throw ConfigError("override key '" + key + "' has an empty component");
        }
        patch = Json{{*it, patch}};
    }
    merge(config, patch, "");
}

void check_writable_root(const fs::path& root) {
    if (root.empty()) {
        throw ConfigError("paths.root must not be empty");
    }
    fs::path probe = fs::absolute(root);
    while (!fs::exists(probe)) {
        if (!probe.has_parent_path() || probe.parent_path() == probe) {
            throw ConfigError("paths.root " + root.string() + " has no existing ancestor");
        }
        probe = probe.parent_path();
    }
    if (!fs::is_directory(probe)) {
        throw ConfigError("paths.root " + root.string() + ": " + probe.string() + " is not a directory");
    }
    if (::access(probe.c_str(), W_OK) != 0) {
        throw ConfigError("paths.root " + root.string() + ": " + probe.string() + " is not writable");
    }
}

std::string hex64(std::uint64_t v) {
    std::ostringstream ss;
    ss << std::hex << std::setw(16) << std::setfill('0') << v;
    return ss.str();
}

std::string dump_lines(const std::vector<Json>& records) {
    std::string out;
    for (const Json& r : records) {
        out += r.dump();
        out += '\n';
    }
    return out;
}

std::string params_digest(const PolicyParams& params) {
    const auto data = params.data();
    return hex64(fnv1a64(std::string_view(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double))));
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

Json RunConfig::to_json() const {
    Json j;
    j["seed"] = seed;
    j["env"] = {{"dt", env.dt},
                {"v_max", env.v_max},
                {"w_max", env.w_max},
                {"max_steps", env.max_steps},
                {"success_radius", env.success_radius}};
    j["policy"] = {{"feature_dim", policy.feature_dim},
                   {"embed_dim", policy.embed_dim},
                   {"hidden_dim", policy.hidden_dim},
                   {"max_length", policy.max_length},
                   {"init_scale", policy.init_scale}};
    j["sft"] = {{"learning_rate", sft.learning_rate},
                {"epochs", sft.epochs},
                {"batch_size", sft.batch_size},
                {"phase1_epochs", sft_phase1_epochs}};
    j["grpo"] = {{"group_size", grpo.group_size},
                 {"samples_per_step", grpo.samples_per_step},
                 {"clip_epsilon", grpo.clip_epsilon},
                 {"kl_beta", grpo.kl_beta},
                 {"norm_epsilon", grpo.norm_epsilon},
                 {"learning_rate", grpo.learning_rate},
                 {"max_updates", grpo.max_updates},
                 {"inner_epochs", grpo.inner_epochs}};
    j["reward"] = {{"movement", reward.movement}, {"action", reward.action}, {"format", reward.format}};
    j["registry"] = registry;
    j["data"] = {{"teacher", data.teacher},
                 {"teacher_command", data.teacher_command},
                 {"malform_rate", data.malform_rate},
                 {"concurrency", data.concurrency},
                 {"max_attempts", data.max_attempts},
                 {"backoff_ms", data.backoff_ms},
                 {"arenas", suite_json(data.arenas)}};
    j["suites"] = {{"train", suite_json(train_suite)},
                   {"eval", suite_json(eval_suite)},
                   {"ablate", suite_json(ablate_suite)}};
    j["pool"] = {{"perturb_fraction", pool.perturb_fraction},
                 {"position_noise", pool.position_noise},
                 {"yaw_noise", pool.yaw_noise},
                 {"balance_fraction", pool.balance_fraction}};
    j["eval"] = {{"rollout_seed", rollout_seed}};
    j["paths"] = {{"root", root.string()}};
    return j;
}

RunConfig RunConfig::from_json(const Json& input) {
    // Fill absent keys from the defaults so partial documents are accepted.
    Json j = RunConfig{}.to_json();
    merge(j, input, "");
    const Reader r(j, "");
    RunConfig c;
    c.seed = r.count("seed");

    const Reader e = r.object("env");
    c.env.dt = e.real("dt");
    c.env.v_max = e.real("v_max");
    c.env.w_max = e.real("w_max");
    c.env.max_steps = e.integer("max_steps");
    c.env.success_radius = e.real("success_radius");

    const Reader p = r.object("policy");
    c.policy.feature_dim = p.count("feature_dim");
    c.policy.embed_dim = p.count("embed_dim");
    c.policy.hidden_dim = p.count("hidden_dim");
    c.policy.max_length = p.count("max_length");
    c.policy.init_scale = p.real("init_scale");

    const Reader s = r.object("sft");
    c.sft.learning_rate = s.real("learning_rate");
    c.sft.epochs = s.count("epochs");
    c.sft.batch_size = s.count("batch_size");
    c.sft_phase1_epochs = s.count("phase1_epochs");

    const Reader g = r.object("grpo");
    c.grpo.group_size = g.count("group_size");
    c.grpo.samples_per_step = g.count("samples_per_step");
    c.grpo.clip_epsilon = g.real("clip_epsilon");
    c.grpo.kl_beta = g.real("kl_beta");
    c.grpo.norm_epsilon = g.real("norm_epsilon");
    c.grpo.learning_rate = g.real("learning_rate");
    c.grpo.max_updates = g.count("max_updates");
    c.grpo.inner_epochs = g.count("inner_epochs");

    const Reader w = r.object("reward");
    c.reward = {w.real("movement"), w.real("action"), w.real("format")};

    c.registry = r.strings("registry");

    const Reader d = r.object("data");
    c.data.teacher = d.string("teacher");
    c.data.teacher_command = d.string("teacher_command");
    c.data.malform_rate = d.real("malform_rate");
    c.data.concurrency = d.count("concurrency");
    c.data.max_attempts = d.integer("max_attempts");
    c.data.backoff_ms = d.integer("backoff_ms");
    c.data.arenas = d.suite("arenas");

    const Reader su = r.object("suites");
    c.train_suite = su.suite("train");
    c.eval_suite = su.suite("eval");
    c.ablate_suite = su.suite("ablate");

    const Reader po = r.object("pool");
    c.pool.perturb_fraction = po.real("perturb_fraction");
    c.pool.position_noise = po.real("position_noise");
    c.pool.yaw_noise = po.real("yaw_noise");
    c.pool.balance_fraction = po.real("balance_fraction");

    c.rollout_seed = r.object("eval").count("rollout_seed");
    c.root = r.object("paths").string("root");

    c.validate();
    return c;
}

void RunConfig::validate() const {
    try {
        env.validate();
        policy.validate();
        sft.validate();
        grpo.validate();
        reward.validate();
        const Vocabulary vocab = vocabulary();
        (void)vocab;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (policy.feature_dim != env::kFeatureDim) {
        throw ConfigError("policy.feature_dim must equal the observation size " + std::to_string(env::kFeatureDim));
    }
    if (data.teacher != "mock" && data.teacher != "process") {
        throw ConfigError("data.teacher must be \"mock\" or \"process\"");
    }
    if (data.teacher == "process" && data.teacher_command.empty()) {
        throw ConfigError("data.teacher_command is required for the process teacher");
    }
    if (!(data.malform_rate >= 0.0 && data.malform_rate <= 1.0)) {
        throw ConfigError("data.malform_rate must lie in [0, 1]");
    }
    if (data.concurrency < 1) {
        throw ConfigError("data.concurrency must be >= 1");
    }
    if (data.max_attempts < 1) {
        throw ConfigError("data.max_attempts must be >= 1");
    }
    if (data.backoff_ms < 0) {
        throw ConfigError("data.backoff_ms must be >= 0");
    }
    for (const auto& [name, spec] : {std::pair{"data.arenas", data.arenas}, std::pair{"suites.train", train_suite},
                                     std::pair{"suites.eval", eval_suite}, std::pair{"suites.ablate", ablate_suite}}) {
        if (spec.total() == 0) {
            throw ConfigError(std::string(name) + " must contain at least one arena");
        }
    }
    const auto fraction = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!fraction(pool.perturb_fraction) || !fraction(pool.balance_fraction)) {
        throw ConfigError("pool fractions must lie in [0, 1]");
    }
    if (!(pool.position_noise >= 0.0) || !(pool.yaw_noise >= 0.0) || !std::isfinite(pool.position_noise) ||
        !std::isfinite(pool.yaw_noise)) {
        throw ConfigError("pool noise scales must be finite and >= 0");
    }
    check_writable_root(root);
}

std::string RunConfig::digest() const {
    Json j = to_json();
    j.erase("seed");
    j.erase("paths");
    return hex64(fnv1a64(j.dump())).substr(0, 12);
}

fs::path RunConfig::run_dir() const { return root / (digest() + "-s" + std::to_string(seed)); }

RunConfig load_config(const std::optional<fs::path>& path, const std::vector<std::string>& overrides) {
    Json j = RunConfig{}.to_json();
    if (path) {
        std::string text;
        try {
            text = io::read_file(*path);
        } catch (const std::runtime_error& e) {
            throw ConfigError(e.what());
        }
        const Json file = Json::parse(text, nullptr, false);
        if (file.is_discarded()) {
            throw ConfigError("config file " + path->string() + " is not valid JSON");
        }
        merge(j, file, "");
    }
    for (const std::string& o : overrides) {
        apply_override(j, o);
    }
    return RunConfig::from_json(j);
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct Session {
    RunConfig config;
    ActionRegistry registry;
    Vocabulary vocab;
    fs::path dir;
    std::ostream& out;

    Session(RunConfig c, std::ostream& o)
        : config(std::move(c)), registry(config.action_registry()), vocab(config.vocabulary()),
          dir(config.run_dir()), out(o) {
        io::write_file(dir / "config.json", config.to_json().dump(2) + "\n");
    }

    fs::path manifest_path() const { return dir / "data" / "manifest.jsonl"; }
    fs::path checkpoint_path(const std::string& stage) const { return dir / "checkpoints" / (stage + ".json"); }

    std::vector<env::Arena> train_arenas() const {
        return pipeline::make_suite(config.train_suite_seed(), config.train_suite, config.env);
    }

    io::Checkpoint checkpoint(const std::string& stage, const PolicyParams& params) const {
        return {stage, config.seed, params, vocab.digest(), registry.digest(), registry.labels()};
    }

    void save(const fs::path& path, const io::Checkpoint& c) const {
        std::ostringstream ss;
        io::write_checkpoint(ss, c);
        io::write_file(path, ss.str());
    }

    io::Checkpoint load(const fs::path& path) const {
        std::istringstream in(io::read_file(path));
        io::Checkpoint c = io::read_checkpoint(in);
        io::check_compatible(c, vocab, registry);
        return c;
    }

    io::Checkpoint load_reference(const std::optional<fs::path>& path) const {
        const fs::path p = path.value_or(checkpoint_path("sft"));
        if (!fs::exists(p)) {
            throw UsageError("reference policy missing: " + p.string() + " (run train --stage sft first)");
        }
        return load(p);
    }
};

std::unique_ptr<data::TeacherClient> make_teacher(const RunConfig& c) {
    if (c.data.teacher == "process") {
        return std::make_unique<data::ProcessTeacher>(c.data.teacher_command);
    }
    return std::make_unique<data::MockTeacher>(c.seed, c.data.malform_rate, c.env.limits());
}

int cmd_gen_data(Session& s) {
    const RunConfig& c = s.config;
    const auto arenas = pipeline::make_suite(c.train_suite_seed(), c.data.arenas, c.env);
    const auto episodes = data::collect_oracle_episodes(arenas, c.env, s.registry);
    auto teacher = make_teacher(c);
    const data::SynthesisOptions options{c.data.concurrency, c.data.max_attempts,
                                         std::chrono::milliseconds(c.data.backoff_ms)};
    std::vector<data::CotSample> samples;
    for (data::Granularity g : data::kAllGranularities) {
        auto part = data::synthesize(*teacher, episodes, g, options);
        samples.insert(samples.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    const data::DatasetManifest manifest =
        data::filter_dataset(std::move(samples), s.registry, c.env.limits(), c.seed, c.digest());
    std::ostringstream ss;
    data::write_manifest(ss, manifest);
    io::write_file(s.manifest_path(), ss.str());
    s.out << data::format_stats(data::stats(manifest));
    s.out << "manifest: " << s.manifest_path().string() << "\n";
    return 0;
}

data::DatasetManifest read_manifest(const fs::path& path) {
    if (!fs::exists(path)) {
        throw UsageError("dataset manifest missing: " + path.string() + " (run gen-data first)");
    }
    std::istringstream in(io::read_file(path));
    return data::read_manifest(in);
}

int cmd_verify_data(Session& s, const std::optional<fs::path>& manifest_path, std::size_t review) {
    const data::DatasetManifest manifest = read_manifest(manifest_path.value_or(s.manifest_path()));
    std::size_t disagreements = 0;
    for (const data::CotSample& sample : manifest.samples) {
        if (sample.rejection_reason == data::kTeacherFailure) {
            continue;
        }
        const data::Verification v = data::verify(sample, s.registry, s.config.env.limits());
        if (v.verified != sample.verified || v.rejection_reason != sample.rejection_reason) {
            ++disagreements;
            s.out << "disagreement: " << sample.id << " stored " << (sample.verified ? "accepted" : "rejected")
                  << ", re-verified " << (v.verified ? "accepted" : v.rejection_reason) << "\n";
        }
    }
    s.out << data::format_stats(data::stats(manifest));
    s.out << "re-verified " << manifest.samples.size() << " records, " << disagreements << " disagreements\n";
    if (review > 0) {
        std::ostringstream ss;
        for (const data::CotSample& r : data::select_for_review(manifest, review, s.config.seed)) {
            ss << "id: " << r.id << "\ngranularity: " << data::to_string(r.granularity)
               << "\ninstruction: " << r.instruction << "\nthink: " << r.think << "\nanswer: " << r.answer
               << "\n\n";
        }
        const fs::path path = s.dir / "data" / "review.txt";
        io::write_file(path, ss.str());
        s.out << "review sample: " << path.string() << "\n";
    }
    return disagreements == 0 ? 0 : 1;
}

int cmd_train_sft(Session& s, const std::optional<fs::path>& manifest_path) {
    const RunConfig& c = s.config;
    const data::DatasetManifest manifest = read_manifest(manifest_path.value_or(s.manifest_path()));
    PolicyParams params = PolicyParams::random(c.policy, s.vocab.size(), c.seed);
    sft::SftConfig sc = c.sft;
    sc.seed = c.seed;

    std::vector<Json> log;
    const auto t0 = std::chrono::steady_clock::now();
    const auto logger = [&](int phase) {
        return [&, phase](const sft::EpochReport& r) {
            log.push_back({{"phase", phase},
                           {"epoch", r.epoch},
                           {"mean_loss", r.mean_loss},
                           {"wall_time_s", seconds_since(t0)}});
        };
    };

    auto phase1 = manifest.accepted(data::Granularity::episode);
    const auto nav = manifest.accepted(data::Granularity::nav);
    phase1.insert(phase1.end(), nav.begin(), nav.end());
    if (c.sft_phase1_epochs > 0 && !phase1.empty()) {
        sft::SftConfig first = sc;
        first.epochs = c.sft_phase1_epochs;
        params = sft::train_sft(params, sft::make_examples(phase1, s.vocab, c.policy.max_length), first, logger(1));
        s.out << "phase 1: " << phase1.size() << " episode/nav records, " << first.epochs << " epochs, loss "
              << log.back().at("mean_loss").get<double>() << "\n";
    }
    const auto steps = manifest.accepted(data::Granularity::step);
    if (steps.empty()) {
        throw std::runtime_error("manifest has no accepted step-level records");
    }
    params = sft::train_sft(params, sft::make_examples(steps, s.vocab, c.policy.max_length), sc, logger(2));
    s.out << "phase 2: " << steps.size() << " step records, " << sc.epochs << " epochs, loss "
          << log.back().at("mean_loss").get<double>() << "\n";

    const fs::path path = s.checkpoint_path("sft");
    s.save(path, s.checkpoint("sft", params));
    io::write_file(s.dir / "logs" / "sft.jsonl", dump_lines(log));
    s.out << "checkpoint: " << path.string() << "\n";
    return 0;
}

int cmd_train_grpo(Session& s, const std::optional<fs::path>& reference_path) {
    const RunConfig& c = s.config;
    const io::Checkpoint ref_ck = s.load_reference(reference_path);
    const sft::ReferencePolicy ref = sft::freeze_reference(ref_ck.params);
    const auto arenas = s.train_arenas();
    const pipeline::ContextPool pool(arenas, c.env, s.registry, c.seed, c.pool);
    const auto reward_fn = pipeline::make_reward_fn(c.reward, s.registry, c.env.limits());

    std::vector<Json> log;
    const auto t0 = std::chrono::steady_clock::now();
    const auto on_step = [&](std::size_t step, const grpo::UpdateReport& r) {
        log.push_back({{"step", step},
                       {"objective_value", r.objective_value},
                       {"mean_reward", r.mean_reward},
                       {"mean_movement", r.mean_movement},
                       {"mean_action", r.mean_action},
                       {"mean_format", r.mean_format},
                       {"mean_kl", r.mean_kl},
                       {"clip_fraction", r.clip_fraction},
                       {"grad_norm", r.grad_norm},
                       {"wall_time_s", seconds_since(t0)}});
        if ((step + 1) % 100 == 0) {
            s.out << "step " << step + 1 << " reward " << r.mean_reward << " kl " << r.mean_kl << "\n";
        }
    };
    const PolicyParams params =
        grpo::train_grpo(ref.params(), ref.params(), s.vocab, pool.sampler(), reward_fn, c.grpo, c.seed, on_step);

    const fs::path path = s.checkpoint_path("grpo");
    s.save(path, s.checkpoint("grpo", params));
    io::write_file(s.dir / "logs" / "grpo.jsonl", dump_lines(log));
    s.out << c.grpo.max_updates << " updates from " << ref_ck.stage << " reference in " << seconds_since(t0)
          << " s\ncheckpoint: " << path.string() << "\n";
    return 0;
}

struct SuiteChoice {
    std::string label;
    std::vector<env::Arena> arenas;
};

SuiteChoice choose_suite(const Session& s, const std::string& suite) {
    const RunConfig& c = s.config;
    if (suite == "eval") {
        return {suite, pipeline::make_suite(c.eval_suite_seed(), c.eval_suite, c.env)};
    }
    if (suite == "train") {
        return {suite, s.train_arenas()};
    }
    if (suite == "ablate") {
        return {suite, pipeline::make_suite(c.ablate_suite_seed(), c.ablate_suite, c.env)};
    }
    if (!fs::exists(suite)) {
        throw UsageError("suite must be eval, train, ablate or an arena-suite file; got " + suite);
    }
    std::istringstream in(io::read_file(suite));
    return {fs::path(suite).stem().string(), io::read_suite(in)};
}

int cmd_eval(Session& s, const std::string& policy, const std::optional<fs::path>& checkpoint_path,
             const std::string& suite, std::optional<std::string> name) {
    const RunConfig& c = s.config;
    const SuiteChoice chosen = choose_suite(s, suite);
    pipeline::Evaluation ev;
    Json meta;
    if (policy == "oracle") {
        if (checkpoint_path) {
            throw UsageError("--checkpoint cannot be combined with --policy oracle");
        }
        ev = pipeline::evaluate_oracle(chosen.arenas, c.env, s.registry);
        meta["policy"] = "oracle";
        name = name.value_or("oracle");
    } else if (policy == "checkpoint") {
        fs::path p;
        if (checkpoint_path) {
            p = *checkpoint_path;
        } else if (fs::exists(s.checkpoint_path("grpo"))) {
            p = s.checkpoint_path("grpo");
        } else {
            p = s.checkpoint_path("sft");
        }
        if (!fs::exists(p)) {
            throw UsageError("checkpoint missing: " + p.string());
        }
        const io::Checkpoint ck = s.load(p);
        ev = pipeline::evaluate_policy(ck.params, s.vocab, chosen.arenas, c.env, s.registry, c.rollout_seed);
        meta["policy"] = "checkpoint";
        meta["stage"] = ck.stage;
        meta["parameters_digest"] = params_digest(ck.params);
        name = name.value_or(p.stem().string());
    } else {
        throw UsageError("--policy must be checkpoint or oracle");
    }
    if (chosen.label != "eval" && !name->ends_with("-" + chosen.label)) {
        *name += "-" + chosen.label;
    }
    const auto reward_fn = pipeline::make_reward_fn(c.reward, s.registry, c.env.limits());

    const fs::path dir = s.dir / "eval" / *name;
    std::ostringstream suite_out, traces_out;
    io::write_suite(suite_out, chosen.arenas);
    io::write_traces(traces_out, ev.traces);
    std::vector<Json> reports;
    for (const auto& r : ev.reports) {
        reports.push_back(io::to_json(r));
    }
    const std::string table = metrics::format_table(ev.summary, *name + " on " + chosen.label + " suite");
    Json summary = meta;
    summary["name"] = *name;
    summary["suite"] = chosen.label;
    summary["arenas"] = chosen.arenas.size();
    summary["rollout_seed"] = c.rollout_seed;
    summary["closed_loop_reward"] = pipeline::closed_loop_reward(ev, chosen.arenas, c.env, reward_fn);
    summary["summary"] = io::to_json(ev.summary);

    io::write_file(dir / "suite.json", suite_out.str());
    io::write_file(dir / "traces.jsonl", traces_out.str());
    io::write_file(dir / "reports.jsonl", dump_lines(reports));
    io::write_file(dir / "summary.json", summary.dump(2) + "\n");
    io::write_file(dir / "table.txt", table);
    s.out << table << "results: " << dir.string() << "\n";
    return 0;
}

std::string format_ablation(const std::vector<pipeline::AblationRow>& rows) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(3);
    ss << "R_m  R_action  R_format     SR      SPL\n";
    const auto mark = [](bool on) { return on ? "x" : "-"; };
    for (const auto& row : rows) {
        const auto& o = row.evaluation.summary.overall;
        ss << std::left << std::setw(5) << mark(row.mask.movement) << std::setw(10) << mark(row.mask.action)
           << std::setw(10) << mark(row.mask.format) << std::right << std::setw(6) << o.sr << std::setw(9) << o.spl;
        if (row.mask.empty()) {
            ss << "  (SFT only)";
        } else if (row.mask.full()) {
            ss << "  * full reward";
        }
        ss << "\n";
    }
    return ss.str();
}

int cmd_ablate(Session& s, const std::optional<fs::path>& reference_path) {
    const RunConfig& c = s.config;
    const io::Checkpoint ref = s.load_reference(reference_path);
    const auto train = s.train_arenas();
    const pipeline::ContextPool pool(train, c.env, s.registry, c.seed, c.pool);
    const auto eval_arenas = pipeline::make_suite(c.ablate_suite_seed(), c.ablate_suite, c.env);

    pipeline::AblationSetup setup;
    setup.sft_params = &ref.params;
    setup.vocab = &s.vocab;
    setup.pool = &pool;
    setup.eval_arenas = eval_arenas;
    setup.env = c.env;
    setup.registry = s.registry;
    setup.grpo = c.grpo;
    setup.base_weights = c.reward;
    setup.train_seed = c.seed;
    setup.rollout_seed = c.rollout_seed;
    const auto rows = pipeline::run_ablation(setup, [&](const pipeline::AblationRow& row) {
        s.out << "mask " << row.mask.movement << row.mask.action << row.mask.format << " SR "
              << row.evaluation.summary.overall.sr << " SPL " << row.evaluation.summary.overall.spl << "\n";
    });

    Json results = Json::array();
    for (const auto& row : rows) {
        results.push_back({{"movement", row.mask.movement},
                           {"action", row.mask.action},
                           {"format", row.mask.format},
                           {"summary", io::to_json(row.evaluation.summary)}});
    }
    const std::string table = format_ablation(rows);
    io::write_file(s.dir / "ablate" / "table.txt", table);
    io::write_file(s.dir / "ablate" / "results.json", results.dump(2) + "\n");
    s.out << table;
    return 0;
}

bool same_state(const env::AgentState& a, const env::AgentState& b) {
    constexpr double tol = 1e-9;
    return std::abs(a.x - b.x) <= tol && std::abs(a.y - b.y) <= tol && std::abs(a.yaw - b.yaw) <= tol &&
           a.collided == b.collided && a.step_index == b.step_index && a.behaviors_done == b.behaviors_done;
}

// Re-derives commands from the raw responses and re-simulates the episode;
// returns the first inconsistent step, if any.
std::optional<std::string> replay_trace(const env::EpisodeTrace& t, const env::Arena& arena, const Session& s,
                                        bool verbose) {
    const auto limits = s.config.env.limits();
    env::AgentState state = env::initial_state(arena);
    if (t.states.empty() || !same_state(state, t.states.front())) {
        return "start state differs";
    }
    int streak = 0;
    for (std::size_t k = 0; k < t.raw_responses.size(); ++k) {
        const ParseOutcome parsed = parse_response(t.raw_responses[k], s.registry, limits);
        const ControlCommand command = parsed.ok() ? parsed.response->command : ControlCommand{0.0, 0.0, 0.0, "move"};
        if (parsed.ok() != t.format_ok[k] || !(command == t.commands[k])) {
            return "step " + std::to_string(k) + ": command differs from the recorded one";
        }
        state = env::step(state, command, arena, s.config.env);
        if (!same_state(state, t.states[k + 1])) {
            return "step " + std::to_string(k) + ": state differs from the recorded one";
        }
        if (verbose) {
            s.out << std::fixed << std::setprecision(3) << "  " << std::setw(2) << k << "  x=" << state.x
                  << " y=" << state.y << " yaw=" << state.yaw << (state.collided ? " collided" : "") << "  "
                  << t.raw_responses[k] << "\n";
            s.out.unsetf(std::ios::floatfield);
        }
        streak = state.collided ? streak + 1 : 0;
        const bool last = k + 1 == t.raw_responses.size();
        if (!last && ((parsed.ok() && command.action == kStopLabel) || streak >= env::kCollisionHaltStreak)) {
            return "episode continued past a terminal step " + std::to_string(k);
        }
    }
    return std::nullopt;
}

int cmd_replay(Session& s, const std::string& name, const std::optional<std::string>& arena_id, bool verbose) {
    const fs::path dir = s.dir / "eval" / name;
    if (!fs::exists(dir / "traces.jsonl")) {
        throw UsageError("no traces for evaluation '" + name + "' under " + dir.string());
    }
    std::istringstream suite_in(io::read_file(dir / "suite.json"));
    std::istringstream traces_in(io::read_file(dir / "traces.jsonl"));
    const auto arenas = io::read_suite(suite_in);
    const auto traces = io::read_traces(traces_in);
    std::map<std::string, const env::Arena*> by_id;
    for (const auto& a : arenas) {
        by_id[a.id] = &a;
    }
    std::size_t replayed = 0, failed = 0;
    for (const auto& t : traces) {
        if (arena_id && t.arena_id != *arena_id) {
            continue;
        }
        ++replayed;
        const auto it = by_id.find(t.arena_id);
        if (it == by_id.end()) {
            ++failed;
            s.out << t.arena_id << ": arena not in suite\n";
            continue;
        }
        if (verbose) {
            s.out << t.arena_id << "\n";
        }
        const auto problem = replay_trace(t, *it->second, s, verbose);
        failed += problem.has_value();
        s.out << t.arena_id << ": " << t.commands.size() << " steps, " << env::to_string(t.terminated_by) << ", "
              << (problem ? "MISMATCH " + *problem : std::string("reproduced")) << "\n";
    }
    if (arena_id && replayed == 0) {
        throw UsageError("arena " + *arena_id + " has no trace in '" + name + "'");
    }
    s.out << replayed - failed << "/" << replayed << " traces reproduced\n";
    return failed == 0 ? 0 : 1;
}

int cmd_report(Session& s) {
    std::ostringstream ss;
    ss << "run " << s.dir.filename().string() << " (seed " << s.config.seed << ")\n\n";
    std::vector<fs::path> evals;
    if (fs::exists(s.dir / "eval")) {
        for (const auto& entry : fs::directory_iterator(s.dir / "eval")) {
            if (fs::exists(entry.path() / "summary.json")) {
                evals.push_back(entry.path());
            }
        }
    }
    std::sort(evals.begin(), evals.end());
    for (const fs::path& e : evals) {
        const Json summary = Json::parse(io::read_file(e / "summary.json"));
        ss << io::read_file(e / "table.txt");
        ss << "closed-loop reward " << summary.at("closed_loop_reward").get<double>() << "\n\n";
    }
    if (fs::exists(s.dir / "ablate" / "table.txt")) {
        ss << "reward ablation (" << s.config.ablate_suite.total() << " arenas)\n"
           << io::read_file(s.dir / "ablate" / "table.txt") << "\n";
    }
    if (evals.empty() && !fs::exists(s.dir / "ablate")) {
        throw UsageError("nothing to report under " + s.dir.string() + " (run eval or ablate first)");
    }
    io::write_file(s.dir / "report.txt", ss.str());
    s.out << ss.str() << "report: " << (s.dir / "report.txt").string() << "\n";
    return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Toy multi-granularity CoT navigation pipeline: data, SFT, GRPO, evaluation"};
    app.name(args.empty() ? "mvla" : args.front());
    app.require_subcommand(1);

    std::optional<fs::path> config_path;
    std::vector<std::string> overrides;
    app.add_option("-c,--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("-s,--set", overrides, "Override a config key, e.g. grpo.max_updates=100");

    auto* gen = app.add_subcommand("gen-data", "Synthesize and filter CoT records into a manifest");
    auto* verify = app.add_subcommand("verify-data", "Re-run the verifier over a manifest");
    std::optional<fs::path> manifest;
    std::size_t review = 0;
    verify->add_option("--manifest", manifest, "Manifest path (default: run directory)");
    verify->add_option("--review", review, "Export up to N accepted records per granularity for review");

    auto* train = app.add_subcommand("train", "Run a training stage");
    std::string stage;
    std::optional<fs::path> checkpoint;
    train->add_option("--stage", stage, "sft or grpo")->required()->check(CLI::IsMember({"sft", "grpo"}));
    train->add_option("--manifest", manifest, "Manifest for SFT (default: run directory)");
    train->add_option("--checkpoint", checkpoint, "Reference checkpoint for GRPO (default: run directory)");

    auto* eval = app.add_subcommand("eval", "Roll out a policy on an arena suite");
    std::string policy = "checkpoint";
    std::string suite = "eval";
    std::optional<std::string> name;
    eval->add_option("--policy", policy, "checkpoint or oracle")->check(CLI::IsMember({"checkpoint", "oracle"}));
    eval->add_option("--checkpoint", checkpoint, "Checkpoint file (default: grpo, else sft, of the run)");
    eval->add_option("--suite", suite, "eval, train, ablate or an arena-suite JSON file");
    eval->add_option("--name", name, "Output name under eval/");

    auto* ablate = app.add_subcommand("ablate", "GRPO under every reward mask, evaluated on the ablation suite");
    ablate->add_option("--checkpoint", checkpoint, "SFT checkpoint (default: run directory)");

    auto* replay = app.add_subcommand("replay", "Re-simulate recorded traces and check they reproduce");
    std::string replay_name = "grpo";
    std::optional<std::string> arena_id;
    bool verbose = false;
    replay->add_option("--eval", replay_name, "Evaluation name under eval/");
    replay->add_option("--arena", arena_id, "Replay one arena only");
    replay->add_flag("-v,--verbose", verbose, "Print every step");

    auto* report = app.add_subcommand("report", "Collect evaluation tables into report.txt");
    auto* show = app.add_subcommand("config", "Print the resolved configuration and run directory");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) {
        reversed.pop_back();
    }
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        return app.exit(e, out, err);
    }

    try {
        RunConfig config = load_config(config_path, overrides);
        if (show->parsed()) {
            out << config.to_json().dump(2) << "\nrun directory: " << config.run_dir().string() << "\n";
            return 0;
        }
        Session session(std::move(config), out);
        if (gen->parsed()) {
            return cmd_gen_data(session);
        }
        if (verify->parsed()) {
            return cmd_verify_data(session, manifest, review);
        }
        if (train->parsed()) {
            return stage == "sft" ? cmd_train_sft(session, manifest) : cmd_train_grpo(session, checkpoint);
        }
        if (eval->parsed()) {
            return cmd_eval(session, policy, checkpoint, suite, name);
        }
        if (ablate->parsed()) {
            return cmd_ablate(session, checkpoint);
        }
        if (replay->parsed()) {
            return cmd_replay(session, replay_name, arena_id, verbose);
        }
        if (report->parsed()) {
            return cmd_report(session);
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return 2;
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const io::CheckpointMismatch& e) {
        err << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}

}  // namespace mvla::cli
