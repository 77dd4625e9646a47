#pragma once

// JSON records for arena suites, traces, checkpoints and metric summaries.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "mvla/metrics.hpp"
#include "mvla/nav_env.hpp"
#include "mvla/policy.hpp"
#include "mvla/structured_output.hpp"

namespace mvla::io {

using Json = nlohmann::ordered_json;

Json to_json(const env::Arena& arena);
env::Arena arena_from_json(const Json& j);

// {"format": "mvla-arena-suite", "version": 1, "arenas": [...]}
void write_suite(std::ostream& out, const std::vector<env::Arena>& arenas);
std::vector<env::Arena> read_suite(std::istream& in);

Json to_json(const env::EpisodeTrace& trace);
env::EpisodeTrace trace_from_json(const Json& j);
// One trace per line.
void write_traces(std::ostream& out, const std::vector<env::EpisodeTrace>& traces);
std::vector<env::EpisodeTrace> read_traces(std::istream& in);

Json to_json(const metrics::MetricReport& report);
Json to_json(const metrics::SummaryRow& row);
Json to_json(const metrics::Summary& summary);

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    std::string stage;
    std::uint64_t seed = 0;
    PolicyParams params;
    std::string vocab_digest;
    std::string registry_digest;
    std::vector<std::string> registry;
};

class CheckpointMismatch : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

void write_checkpoint(std::ostream& out, const Checkpoint& checkpoint);
// Throws std::runtime_error on malformed or version-mismatched input.
Checkpoint read_checkpoint(std::istream& in);
// Throws CheckpointMismatch when the digests differ from the live ones.
void check_compatible(const Checkpoint& checkpoint, const Vocabulary& vocab, const ActionRegistry& registry);

// File helpers; throw std::runtime_error with the path on failure.
std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace mvla::io
