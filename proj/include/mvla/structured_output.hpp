#pragma once

// Reasoning-execution response grammar:
//
//   <think>{reasoning}</think><answer>vx=F vy=F wyaw=F action=LABEL</answer>
//
// F is an optionally signed decimal without exponent; serialization always
// prints three fractional digits. Surrounding whitespace is tolerated,
// anything else outside the two tag pairs is rejected.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mvla {

inline constexpr std::string_view kThinkOpen = "<think>";
inline constexpr std::string_view kThinkClose = "</think>";
inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";
inline constexpr std::string_view kStopLabel = "stop";

// Closed, case-sensitive set of discrete action labels. Always contains "stop".
class ActionRegistry {
  public:
    ActionRegistry();
    explicit ActionRegistry(std::vector<std::string> labels);

    bool contains(std::string_view label) const;
    const std::vector<std::string>& labels() const { return labels_; }
    std::size_t size() const { return labels_.size(); }
    std::string digest() const;

    bool operator==(const ActionRegistry&) const = default;

    static const std::vector<std::string>& default_labels();

  private:
    std::vector<std::string> labels_;
};

struct VelocityLimits {
    double v_max = 1.0;
    double w_max = 1.0;
};

// a_t = [vx, vy, wyaw, action]
struct ControlCommand {
    double vx = 0.0;
    double vy = 0.0;
    double wyaw = 0.0;
    std::string action{kStopLabel};

    bool operator==(const ControlCommand&) const = default;
};

enum class FormatFailure {
    none,
    missing_tag,
    tag_order,
    empty_think,
    unparseable_answer,
    unknown_action,
    velocity_out_of_range,
    trailing_garbage,
};

inline constexpr FormatFailure kAllFormatFailures[] = {
    FormatFailure::missing_tag,        FormatFailure::tag_order,
    FormatFailure::empty_think,        FormatFailure::unparseable_answer,
    FormatFailure::unknown_action,     FormatFailure::velocity_out_of_range,
    FormatFailure::trailing_garbage,
};

std::string_view to_string(FormatFailure failure);
std::optional<FormatFailure> format_failure_from_string(std::string_view name);

struct FormatVerdict {
    bool valid = false;
    FormatFailure failure_reason = FormatFailure::missing_tag;

    static FormatVerdict ok() { return {true, FormatFailure::none}; }
    static FormatVerdict fail(FormatFailure reason) { return {false, reason}; }
    bool operator==(const FormatVerdict&) const = default;
};

struct ParsedResponse {
    std::string think;
    ControlCommand command;
    std::string raw;

    bool operator==(const ParsedResponse&) const = default;
};

struct ParseOutcome {
    std::optional<ParsedResponse> response;
    FormatFailure failure = FormatFailure::none;

    bool ok() const { return response.has_value(); }
    FormatVerdict verdict() const { return {ok(), failure}; }
};

// The think/answer bodies of a structurally valid response; no command parse.
struct TaggedText {
    std::string think;
    std::string answer;
};

struct TagSplit {
    std::optional<TaggedText> parts;
    FormatFailure failure = FormatFailure::none;
};

bool contains_structural_tag(std::string_view text);
bool is_blank(std::string_view text);
std::string_view trim_ascii(std::string_view text);

// Tag-level checks only (missing_tag, tag_order, trailing_garbage, empty_think).
TagSplit split_tags(std::string_view raw);
FormatVerdict check_structure(std::string_view raw);

FormatVerdict check_format(std::string_view raw, const ActionRegistry& registry,
                           const VelocityLimits& limits);
FormatVerdict check_format(std::string_view raw);

ParseOutcome parse_response(std::string_view raw, const ActionRegistry& registry,
                            const VelocityLimits& limits);

// Checks the answer body `vx=F vy=F wyaw=F action=LABEL`.
struct AnswerParse {
    std::optional<ControlCommand> command;
    FormatFailure failure = FormatFailure::none;
};
AnswerParse parse_answer(std::string_view answer, const ActionRegistry& registry,
                         const VelocityLimits& limits);

bool is_valid_command(const ControlCommand& command, const ActionRegistry& registry,
                      const VelocityLimits& limits);

// Fixed three-decimal rendering used on the wire.
std::string format_velocity(double value);
// Rounds to the 1e-3 grid the wire format can represent.
double quantize_velocity(double value);
ControlCommand quantize(ControlCommand command);

std::string serialize_answer(const ControlCommand& command);
// Throws std::invalid_argument on blank think, embedded tags, or a
// non-finite / non-token command.
std::string serialize(std::string_view think, const ControlCommand& command);
// Tag-only envelope for free-text answers (episode / nav records).
std::string serialize_free(std::string_view think, std::string_view answer);

}  // namespace mvla

namespace mvla {

// Canned reasoning phrases shared by the oracle controller, the data engine
// and the policy vocabulary. Order is part of the vocabulary digest.
enum class Maneuver { forward, turn_left, turn_right, stop, crawl, unload, distinguish };

std::string_view think_phrase(Maneuver maneuver);
const std::vector<std::string>& think_phrases();

// Tokens used by multi-phrase episode / nav records.
inline constexpr std::string_view kPhraseSeparator = " ";
inline constexpr std::string_view kGoalReached = "goal reached";
inline constexpr std::string_view kGoalMissed = "goal missed";

}  // namespace mvla
