#include <cstdlib>
#include <filesystem>
#include <set>
#include <sstream>

#include "doctest.h"
#include "mvla/cli.hpp"
#include "mvla/data_engine.hpp"

using namespace mvla;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        std::string pattern = (fs::temp_directory_path() / "mvla-cli-XXXXXX").string();
        path = ::mkdtemp(pattern.data());
    }
    ~TempDir() { fs::remove_all(path); }
};

struct Result {
    int code = 0;
    std::string out;
    std::string err;
};

// Small but complete pipeline settings.
std::vector<std::string> small(const fs::path& root) {
    return {"--set", "paths.root=" + root.string(),
            "--set", R"(data.arenas={"easy":2,"medium":1,"hard":0})",
            "--set", R"(suites.train={"easy":3,"medium":3,"hard":0})",
            "--set", R"(suites.eval={"easy":3,"medium":2,"hard":1})",
            "--set", R"(suites.ablate={"easy":0,"medium":2,"hard":0})",
            "--set", "sft.epochs=3",
            "--set", "grpo.max_updates=2"};
}

Result invoke(std::vector<std::string> args) {
    args.insert(args.begin(), "mvla");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

Result invoke(const fs::path& root, std::vector<std::string> command, std::vector<std::string> extra = {}) {
    auto args = small(root);
    args.insert(args.end(), extra.begin(), extra.end());
    args.insert(args.end(), command.begin(), command.end());
    return invoke(args);
}

cli::RunConfig small_config(const fs::path& root, std::vector<std::string> extra = {}) {
    std::vector<std::string> overrides;
    auto args = small(root);
    args.insert(args.end(), extra.begin(), extra.end());
    for (std::size_t i = 1; i < args.size(); i += 2) {
        overrides.push_back(args[i]);
    }
    return cli::load_config(std::nullopt, overrides);
}

std::string slurp(const fs::path& p) { return io::read_file(p); }

}  // namespace

TEST_CASE("config defaults round trip through json") {
    const cli::RunConfig c;
    const cli::RunConfig back = cli::RunConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.grpo.group_size == 8);
    CHECK(back.grpo.samples_per_step == 5);
    CHECK(back.grpo.kl_beta == 0.04);
    CHECK(back.grpo.clip_epsilon == 0.2);
    CHECK(back.train_suite == pipeline::SuiteSpec{40, 40, 0});
}

TEST_CASE("config overrides and validation") {
    TempDir tmp;
    const cli::RunConfig c = small_config(tmp.path, {"--set", "grpo.learning_rate=0.5", "--set", "seed=4"});
    CHECK(c.grpo.learning_rate == 0.5);
    CHECK(c.seed == 4);
    CHECK(c.data.arenas == pipeline::SuiteSpec{2, 1, 0});
    CHECK(c.run_dir().filename().string() == c.digest() + "-s4");

    const auto bad = [&](const std::string& o) {
        return small_config(tmp.path, {"--set", o});
    };
    CHECK_THROWS_WITH_AS(bad("grpo.nope=1"), doctest::Contains("unknown config key grpo.nope"), cli::ConfigError);
    CHECK_THROWS_AS(bad("grpo.group_size=1"), cli::ConfigError);
    CHECK_THROWS_AS(bad("grpo.clip_epsilon=1"), cli::ConfigError);
    CHECK_THROWS_AS(bad("grpo.kl_beta=-0.1"), cli::ConfigError);
    CHECK_THROWS_AS(bad("sft.batch_size=0"), cli::ConfigError);
    CHECK_THROWS_AS(bad("sft.epochs=-2"), cli::ConfigError);
    CHECK_THROWS_AS(bad("sft.learning_rate=fast"), cli::ConfigError);
    CHECK_THROWS_AS(bad("env.dt=0"), cli::ConfigError);
    CHECK_THROWS_AS(bad("reward={\"movement\":0,\"action\":0,\"format\":0}"), cli::ConfigError);
    CHECK_THROWS_AS(bad("registry=[\"move\"]"), cli::ConfigError);
    CHECK_THROWS_AS(bad("policy.feature_dim=5"), cli::ConfigError);
    CHECK_THROWS_AS(bad("data.teacher=remote"), cli::ConfigError);
    CHECK_THROWS_AS(bad("data.teacher=process"), cli::ConfigError);
    CHECK_THROWS_AS(bad("data.malform_rate=1.5"), cli::ConfigError);
    CHECK_THROWS_AS(bad("suites.eval={\"easy\":0,\"medium\":0,\"hard\":0}"), cli::ConfigError);
    CHECK_THROWS_AS(bad("grpo=3"), cli::ConfigError);
    CHECK_THROWS_AS(bad("noequals"), cli::ConfigError);
}

TEST_CASE("digest ignores seed and root but not settings") {
    TempDir a, b;
    CHECK(small_config(a.path).digest() == small_config(b.path, {"--set", "seed=9"}).digest());
    CHECK(small_config(a.path).digest() != small_config(a.path, {"--set", "grpo.kl_beta=0.1"}).digest());
}

TEST_CASE("config file is merged under overrides") {
    TempDir tmp;
    const fs::path file = tmp.path / "run.json";
    io::write_file(file, R"({"seed": 3, "grpo": {"max_updates": 7}, "paths": {"root": ")" + tmp.path.string() + "\"}}");
    const cli::RunConfig c = cli::load_config(file, {"grpo.max_updates=9"});
    CHECK(c.seed == 3);
    CHECK(c.grpo.max_updates == 9);
    io::write_file(file, R"({"grpo": {"unknown": 1}})");
    CHECK_THROWS_AS(cli::load_config(file, {}), cli::ConfigError);
    io::write_file(file, "{broken");
    CHECK_THROWS_AS(cli::load_config(file, {}), cli::ConfigError);
}

TEST_CASE("invalid config fails before any output is written") {
    TempDir tmp;
    const Result r = invoke(tmp.path, {"gen-data"}, {"--set", "grpo.clip_epsilon=0"});
    CHECK(r.code == 2);
    CHECK(r.err.find("clip_epsilon") != std::string::npos);
    CHECK(fs::is_empty(tmp.path));
    CHECK(invoke({"--set", "paths.root=" + tmp.path.string(), "bogus"}).code != 0);
    CHECK(invoke({"--set", "paths.root=" + tmp.path.string()}).code != 0);
}

TEST_CASE("gen-data counts, rejections and determinism") {
    TempDir tmp;
    const cli::RunConfig c = small_config(tmp.path);
    const Result r = invoke(tmp.path, {"gen-data"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("acceptance rate") != std::string::npos);
    const fs::path manifest = c.run_dir() / "data" / "manifest.jsonl";
    const std::string first = slurp(manifest);

    // Independent count: one episode and one nav record per arena, one step
    // record per oracle command.
    const auto arenas = pipeline::make_suite(c.train_suite_seed(), c.data.arenas, c.env);
    const auto oracle = pipeline::evaluate_oracle(arenas, c.env, c.action_registry());
    std::size_t steps = 0;
    for (const auto& t : oracle.traces) {
        steps += t.commands.size();
    }
    std::istringstream in(first);
    const data::DatasetManifest m = data::read_manifest(in);
    CHECK(m.counts.at(data::Granularity::episode).total == 3);
    CHECK(m.counts.at(data::Granularity::nav).total == 3);
    CHECK(m.counts.at(data::Granularity::step).total == steps);
    CHECK(m.config_digest == c.digest());

    // Default malform rate 0.05: some rejections, each a mock-injected kind.
    REQUIRE_FALSE(m.rejection_log.empty());
    const std::set<std::string> injected = {"missing_tag", "unknown_action", "velocity_out_of_range",
                                            "trailing_garbage", "unparseable_answer"};
    for (const auto& [id, reason] : m.rejection_log) {
        CHECK_MESSAGE(injected.count(reason), reason);
    }

    REQUIRE(invoke(tmp.path, {"gen-data"}).code == 0);
    CHECK(slurp(manifest) == first);

    const Result clean = invoke(tmp.path, {"gen-data"}, {"--set", "data.malform_rate=0"});
    REQUIRE(clean.code == 0);
    std::istringstream cin(slurp(small_config(tmp.path, {"--set", "data.malform_rate=0"}).run_dir() / "data" /
                                 "manifest.jsonl"));
    CHECK(data::read_manifest(cin).rejection_log.empty());
}

TEST_CASE("verify-data agrees with the stored verdicts") {
    TempDir tmp;
    REQUIRE(invoke(tmp.path, {"gen-data"}).code == 0);
    const Result r = invoke(tmp.path, {"verify-data", "--review", "2"});
    CHECK(r.code == 0);
    CHECK(r.out.find(" 0 disagreements") != std::string::npos);
    const std::string review = slurp(small_config(tmp.path).run_dir() / "data" / "review.txt");
    CHECK(review.find("granularity: step") != std::string::npos);
    CHECK(review.find("granularity: episode") != std::string::npos);
}

TEST_CASE("train stages, checkpoints and logs") {
    TempDir tmp;
    const fs::path dir = small_config(tmp.path).run_dir();
    const Result missing = invoke(tmp.path, {"train", "--stage", "grpo"});
    CHECK(missing.code == 2);
    CHECK(missing.err.find("reference policy missing") != std::string::npos);
    CHECK(invoke(tmp.path, {"train", "--stage", "sft"}).code == 2);  // no manifest yet

    REQUIRE(invoke(tmp.path, {"gen-data"}).code == 0);
    REQUIRE(invoke(tmp.path, {"train", "--stage", "sft"}).code == 0);
    REQUIRE(fs::exists(dir / "checkpoints" / "sft.json"));
    const std::string sft_log = slurp(dir / "logs" / "sft.jsonl");
    CHECK(sft_log.find("\"phase\":1") != std::string::npos);
    CHECK(sft_log.find("\"phase\":2") != std::string::npos);

    REQUIRE(invoke(tmp.path, {"train", "--stage", "grpo"}).code == 0);
    std::istringstream log(slurp(dir / "logs" / "grpo.jsonl"));
    std::string line;
    std::vector<io::Json> records;
    while (std::getline(log, line)) {
        records.push_back(io::Json::parse(line));
    }
    REQUIRE(records.size() == 2);
    CHECK(records[0].at("step") == 0);
    CHECK(std::abs(records[0].at("mean_kl").get<double>()) <= 1e-12);
    for (const char* key : {"objective_value", "mean_reward", "mean_movement", "mean_action", "mean_format",
                            "clip_fraction", "grad_norm", "wall_time_s"}) {
        CHECK_MESSAGE(records[1].contains(key), key);
    }

    std::istringstream sft_in(slurp(dir / "checkpoints" / "sft.json"));
    const io::Checkpoint sft = io::read_checkpoint(sft_in);
    CHECK(sft.stage == "sft");

    // Zero updates leave the reference parameters untouched.
    const auto zero = small_config(tmp.path, {"--set", "grpo.max_updates=0"});
    REQUIRE(invoke(tmp.path, {"train", "--stage", "grpo", "--checkpoint", (dir / "checkpoints" / "sft.json").string()},
                 {"--set", "grpo.max_updates=0"})
                .code == 0);
    std::istringstream zero_in(slurp(zero.run_dir() / "checkpoints" / "grpo.json"));
    CHECK(io::read_checkpoint(zero_in).params == sft.params);
}

TEST_CASE("eval: oracle, random policy, determinism and mismatch") {
    TempDir tmp;
    const cli::RunConfig c = small_config(tmp.path);
    const Result oracle = invoke(tmp.path, {"eval", "--policy", "oracle"});
    REQUIRE(oracle.code == 0);
    const io::Json summary = io::Json::parse(slurp(c.run_dir() / "eval" / "oracle" / "summary.json"));
    CHECK(summary.at("summary").at("by_difficulty").at("easy").at("sr") == 1.0);
    CHECK(summary.at("arenas") == 6);

    // Untrained policy written as a checkpoint by hand.
    const Vocabulary vocab = c.vocabulary();
    const ActionRegistry reg = c.action_registry();
    const fs::path ck = tmp.path / "random.json";
    {
        std::ostringstream ss;
        io::write_checkpoint(ss, {"init", 0, PolicyParams::random(c.policy, vocab.size(), 1), vocab.digest(),
                                  reg.digest(), reg.labels()});
        io::write_file(ck, ss.str());
    }
    REQUIRE(invoke(tmp.path, {"eval", "--checkpoint", ck.string()}).code == 0);
    const fs::path out = c.run_dir() / "eval" / "random";
    const io::Json rs = io::Json::parse(slurp(out / "summary.json"));
    CHECK(rs.at("summary").at("overall").at("sr").get<double>() <= 0.2);
    const std::string table = slurp(out / "table.txt");
    const std::string traces = slurp(out / "traces.jsonl");
    REQUIRE(invoke(tmp.path, {"eval", "--checkpoint", ck.string()}).code == 0);
    CHECK(slurp(out / "table.txt") == table);
    CHECK(slurp(out / "traces.jsonl") == traces);

    const Result mismatch =
        invoke(tmp.path, {"eval", "--checkpoint", ck.string()}, {"--set", R"(registry=["move","stop","crawl"])"});
    CHECK(mismatch.code == 3);
    CHECK(mismatch.err.find("digest") != std::string::npos);

    const Result suite_file = invoke(tmp.path, {"eval", "--policy", "oracle", "--suite",
                                              (c.run_dir() / "eval" / "oracle" / "suite.json").string(),
                                              "--name", "again"});
    REQUIRE(suite_file.code == 0);
    CHECK(slurp(c.run_dir() / "eval" / "again-suite" / "traces.jsonl") ==
          slurp(c.run_dir() / "eval" / "oracle" / "traces.jsonl"));
}

TEST_CASE("replay reproduces recorded traces and flags tampering") {
    TempDir tmp;
    const cli::RunConfig c = small_config(tmp.path);
    REQUIRE(invoke(tmp.path, {"eval", "--policy", "oracle"}).code == 0);
    const Result r = invoke(tmp.path, {"replay", "--eval", "oracle"});
    CHECK(r.code == 0);
    CHECK(r.out.find("6/6 traces reproduced") != std::string::npos);

    const fs::path traces = c.run_dir() / "eval" / "oracle" / "traces.jsonl";
    std::string text = slurp(traces);
    const auto pos = text.find("action=move");
    REQUIRE(pos != std::string::npos);
    text.replace(pos, 11, "action=stop");
    io::write_file(traces, text);
    const Result tampered = invoke(tmp.path, {"replay", "--eval", "oracle"});
    CHECK(tampered.code == 1);
    CHECK(tampered.out.find("MISMATCH") != std::string::npos);
    CHECK(invoke(tmp.path, {"replay", "--eval", "absent"}).code == 2);
}

TEST_CASE("ablate emits the mask table and report collects it") {
    TempDir tmp;
    const cli::RunConfig c = small_config(tmp.path);
    CHECK(invoke(tmp.path, {"ablate"}).code == 2);
    REQUIRE(invoke(tmp.path, {"gen-data"}).code == 0);
    REQUIRE(invoke(tmp.path, {"train", "--stage", "sft"}).code == 0);
    REQUIRE(invoke(tmp.path, {"ablate"}).code == 0);
    const std::string table = slurp(c.run_dir() / "ablate" / "table.txt");
    std::istringstream lines(table);
    std::vector<std::string> rows;
    for (std::string line; std::getline(lines, line);) {
        rows.push_back(line);
    }
    REQUIRE(rows.size() == 9);
    CHECK(rows[1].starts_with("-    -         -"));
    CHECK(rows[1].find("SFT only") != std::string::npos);
    CHECK(rows[4].starts_with("-    -         x"));
    CHECK(rows[8].starts_with("x    x         x"));
    CHECK(rows[8].find("* full reward") != std::string::npos);

    // The no-reward row is the SFT checkpoint evaluated on the same suite.
    REQUIRE(invoke(tmp.path, {"eval", "--checkpoint", (c.run_dir() / "checkpoints" / "sft.json").string(), "--suite",
                            "ablate"})
                .code == 0);
    const io::Json sft = io::Json::parse(slurp(c.run_dir() / "eval" / "sft-ablate" / "summary.json"));
    const io::Json results = io::Json::parse(slurp(c.run_dir() / "ablate" / "results.json"));
    REQUIRE(results.size() == 8);
    CHECK(results[0].at("summary") == sft.at("summary"));

    const Result report = invoke(tmp.path, {"report"});
    CHECK(report.code == 0);
    CHECK(report.out.find("reward ablation") != std::string::npos);
    CHECK(fs::exists(c.run_dir() / "report.txt"));
}
