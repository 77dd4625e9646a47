#pragma once

// Multi-granularity CoT synthesis and rule-based verification.

#include <chrono>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mvla/nav_env.hpp"
#include "mvla/structured_output.hpp"

namespace mvla::data {

enum class Granularity { episode, step, nav };
inline constexpr Granularity kAllGranularities[] = {Granularity::episode, Granularity::step, Granularity::nav};
std::string_view to_string(Granularity g);
Granularity granularity_from_string(std::string_view name);

// One oracle-driven episode with everything a prompt or mock teacher needs.
struct EpisodeContext {
    std::string episode_id;
    env::Arena arena;
    std::string instruction;
    std::vector<env::AgentState> states;  // state before each command
    std::vector<ObservationContext> observations;
    std::vector<Maneuver> maneuvers;
    std::vector<std::string> thinks;
    std::vector<ControlCommand> commands;
    std::vector<env::Pose> poses;  // includes start and final pose
    bool reached = false;
};

using EpisodePtr = std::shared_ptr<const EpisodeContext>;

std::vector<EpisodePtr> collect_oracle_episodes(const std::vector<env::Arena>& arenas, const env::EnvConfig& config,
                                                const ActionRegistry& registry);

std::string observation_digest(const ObservationContext& obs);
std::vector<double> parse_observation_digest(std::string_view digest);

struct TeacherRequest {
    std::string request_id;
    Granularity granularity = Granularity::step;
    std::string prompt;
    std::string instruction;
    std::string pose_digest;
    std::string observation_digest;
    EpisodePtr episode;
    std::optional<std::size_t> step_index;
};

struct TeacherResponse {
    std::string raw;
    double latency_ms = 0.0;
    std::string teacher_id;
    // Set by test doubles that know whether they produced a valid record.
    std::optional<bool> ground_truth_valid;
};

class TeacherError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

class TeacherClient {
  public:
    virtual ~TeacherClient() = default;
    // Thread-safe. Throws TeacherError on transport failure.
    virtual TeacherResponse complete(const TeacherRequest& request) = 0;
    virtual std::string id() const = 0;
};

// Throws std::invalid_argument when the context is incomplete for the
// granularity (step needs a step index inside the trajectory).
TeacherRequest build_prompt(Granularity granularity, const EpisodePtr& episode,
                            std::optional<std::size_t> step_index = std::nullopt);

enum class Malformation { none, missing_tag, bad_action, out_of_range_velocity, trailing_garbage };

// Answers from the oracle annotations carried on the episode context and,
// with probability malform_rate, injects one malformation. Deterministic in
// (seed, request id).
class MockTeacher : public TeacherClient {
  public:
    MockTeacher(std::uint64_t seed, double malform_rate, VelocityLimits limits = {});

    TeacherResponse complete(const TeacherRequest& request) override;
    std::string id() const override { return "mock"; }

    Malformation malformation_for(const TeacherRequest& request) const;

  private:
    std::uint64_t seed_;
    double malform_rate_;
    VelocityLimits limits_;
};

// Canonical (valid) teacher answer for a request, from the oracle annotations.
std::string oracle_annotation(const TeacherRequest& request);

// Line-oriented external process: one JSON request per line on stdin, one
// JSON response per line on stdout ({"raw": ..., "teacher": ...}).
class ProcessTeacher : public TeacherClient {
  public:
    explicit ProcessTeacher(std::string command);
    ~ProcessTeacher() override;
    ProcessTeacher(const ProcessTeacher&) = delete;
    ProcessTeacher& operator=(const ProcessTeacher&) = delete;

    TeacherResponse complete(const TeacherRequest& request) override;
    std::string id() const override { return "process:" + command_; }

  private:
    void start();
    void stop();

    std::string command_;
    std::mutex mutex_;
    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string buffer_;
};

inline constexpr std::string_view kTeacherFailure = "teacher_failure";

struct CotSample {
    std::string id;
    Granularity granularity = Granularity::step;
    std::string instruction;
    std::string observation_digest;
    std::string think;
    std::string answer;
    std::string raw;
    std::string source_episode;
    bool verified = false;
    std::string rejection_reason;  // empty, a FormatFailure name, or teacher_failure
    int attempts = 0;
    std::optional<bool> teacher_label;

    bool operator==(const CotSample&) const = default;
};

struct SynthesisOptions {
    std::size_t concurrency = 4;
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{250};
};

// One request per step (step granularity) or per episode; output order
// follows input order. Failed units become rejected teacher_failure samples.
std::vector<CotSample> synthesize(TeacherClient& teacher, const std::vector<EpisodePtr>& episodes,
                                  Granularity granularity, const SynthesisOptions& options = {});

struct Verification {
    bool verified = false;
    std::string rejection_reason;
};

// Tags, then command parse, registry membership and velocity bounds for step
// records; tag structure and a non-blank answer for episode / nav records.
Verification verify(const CotSample& sample, const ActionRegistry& registry, const VelocityLimits& limits);

struct GranularityCounts {
    std::size_t total = 0;
    std::size_t accepted = 0;
    bool operator==(const GranularityCounts&) const = default;
};

struct DatasetManifest {
    std::uint64_t seed = 0;
    std::string config_digest;
    std::vector<CotSample> samples;
    std::map<Granularity, GranularityCounts> counts;
    std::vector<std::pair<std::string, std::string>> rejection_log;  // (id, reason)

    std::vector<CotSample> accepted(std::optional<Granularity> granularity = std::nullopt) const;
};

DatasetManifest filter_dataset(std::vector<CotSample> samples, const ActionRegistry& registry,
                               const VelocityLimits& limits, std::uint64_t seed = 0, std::string config_digest = {});

struct DatasetStats {
    std::map<Granularity, GranularityCounts> counts;
    std::size_t total = 0;
    std::size_t accepted = 0;
    double acceptance_rate = 0.0;
    std::map<std::string, std::size_t> rejections;
};

DatasetStats stats(const DatasetManifest& manifest);
std::string format_stats(const DatasetStats& s);

void write_manifest(std::ostream& out, const DatasetManifest& manifest);
// Throws std::runtime_error on malformed records or inconsistent header counts.
DatasetManifest read_manifest(std::istream& in);

// Random accepted subset, up to `per_granularity` records from each subset.
std::vector<CotSample> select_for_review(const DatasetManifest& manifest, std::size_t per_granularity,
                                         std::uint64_t seed);

}  // namespace mvla::data
