#pragma once

// Run configuration and the mvla command set.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvla/grpo.hpp"
#include "mvla/io.hpp"
#include "mvla/nav_env.hpp"
#include "mvla/pipeline.hpp"
#include "mvla/policy.hpp"
#include "mvla/reward.hpp"
#include "mvla/sft.hpp"

namespace mvla::cli {

class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

struct DataConfig {
    std::string teacher = "mock";  // "mock" or "process"
    std::string teacher_command;
    double malform_rate = 0.05;
    std::size_t concurrency = 4;
    int max_attempts = 3;
    int backoff_ms = 250;
    pipeline::SuiteSpec arenas{4, 4, 0};  // head of the train suite used for CoT synthesis
};

struct RunConfig {
    std::uint64_t seed = 0;
    env::EnvConfig env;
    PolicyConfig policy;
    sft::SftConfig sft;                // seed is taken from the run seed
    std::size_t sft_phase1_epochs = 2;  // episode + nav records before the step records
    grpo::GrpoConfig grpo;
    RewardWeights reward;
    std::vector<std::string> registry = ActionRegistry::default_labels();
    DataConfig data;
    pipeline::SuiteSpec train_suite{40, 40, 0};
    pipeline::SuiteSpec eval_suite{20, 20, 20};
    pipeline::SuiteSpec ablate_suite{0, 20, 0};
    pipeline::ContextPoolConfig pool;
    std::uint64_t rollout_seed = 5;
    std::filesystem::path root = "runs";

    io::Json to_json() const;
    // Throws ConfigError on unknown keys, wrong types or invariant violations.
    static RunConfig from_json(const io::Json& j);
    void validate() const;

    // Digest of every field except the seed and the output root.
    std::string digest() const;
    std::filesystem::path run_dir() const;

    std::uint64_t train_suite_seed() const { return seed * 100 + 7; }
    std::uint64_t eval_suite_seed() const { return seed * 100 + 99; }
    std::uint64_t ablate_suite_seed() const { return seed * 100 + 98; }

    ActionRegistry action_registry() const { return ActionRegistry(registry); }
    Vocabulary vocabulary() const { return Vocabulary::response_grammar(action_registry(), env.limits()); }
};

// Defaults, then the optional config file, then `key.path=value` overrides
// (value parsed as JSON, else taken as a string). Validated on return.
RunConfig load_config(const std::optional<std::filesystem::path>& path, const std::vector<std::string>& overrides);

// Entry point of the mvla binary; returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace mvla::cli
