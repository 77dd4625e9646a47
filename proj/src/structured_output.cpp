#include "mvla/structured_output.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "mvla/rng.hpp"

namespace mvla {

namespace {

bool is_space(char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

bool is_digit(char c) { return c >= '0' && c <= '9'; }

bool is_label_char(char c) {
    return is_digit(c) || (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c == '_';
}

bool is_label(std::string_view s) {
    return !s.empty() && std::all_of(s.begin(), s.end(), is_label_char);
}

std::size_t count_occurrences(std::string_view text, std::string_view needle) {
    std::size_t count = 0;
    for (std::size_t pos = text.find(needle); pos != std::string_view::npos;
         pos = text.find(needle, pos + needle.size())) {
        ++count;
    }
    return count;
}

// Consumes `[+-]?[0-9]+(\.[0-9]+)?` from the front of `s`.
std::optional<std::string_view> take_number(std::string_view& s) {
    std::size_t i = 0;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
        ++i;
    }
    const std::size_t int_start = i;
    while (i < s.size() && is_digit(s[i])) {
        ++i;
    }
    if (i == int_start) {
        return std::nullopt;
    }
    if (i < s.size() && s[i] == '.') {
        const std::size_t frac_start = ++i;
        while (i < s.size() && is_digit(s[i])) {
            ++i;
        }
        if (i == frac_start) {
            return std::nullopt;
        }
    }
    std::string_view number = s.substr(0, i);
    s.remove_prefix(i);
    return number;
}

bool take_literal(std::string_view& s, std::string_view literal) {
    if (s.substr(0, literal.size()) != literal) {
        return false;
    }
    s.remove_prefix(literal.size());
    return true;
}

double to_double(std::string_view number) {
    // from_chars rejects a leading '+'.
    if (!number.empty() && number.front() == '+') {
        number.remove_prefix(1);
    }
    double value = 0.0;
    const auto [ptr, ec] = std::from_chars(number.data(), number.data() + number.size(), value);
    if (ec == std::errc::result_out_of_range) {
        return number.front() == '-' ? -HUGE_VAL : HUGE_VAL;
    }
    if (ec != std::errc{} || ptr != number.data() + number.size()) {
        return std::nan("");
    }
    return value;
}

}  // namespace

ActionRegistry::ActionRegistry() : labels_(default_labels()) {}

ActionRegistry::ActionRegistry(std::vector<std::string> labels) : labels_(std::move(labels)) {
    if (labels_.empty()) {
        throw std::invalid_argument("action registry must not be empty");
    }
    for (std::size_t i = 0; i < labels_.size(); ++i) {
        if (!is_label(labels_[i])) {
            throw std::invalid_argument("action label '" + labels_[i] + "' is not a [A-Za-z0-9_]+ token");
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (labels_[i] == labels_[j]) {
                throw std::invalid_argument("duplicate action label '" + labels_[i] + "'");
            }
        }
    }
    if (!contains(kStopLabel)) {
        throw std::invalid_argument("action registry must contain 'stop'");
    }
}

bool ActionRegistry::contains(std::string_view label) const {
    return std::find(labels_.begin(), labels_.end(), label) != labels_.end();
}

std::string ActionRegistry::digest() const {
    std::uint64_t h = fnv1a64("registry");
    for (const auto& label : labels_) {
        h = fnv1a64(label, h);
        h = fnv1a64("\x1f", h);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

const std::vector<std::string>& ActionRegistry::default_labels() {
    static const std::vector<std::string> labels = {"stop", "move", "crawl", "unload", "distinguish"};
    return labels;
}

std::string_view to_string(FormatFailure failure) {
    switch (failure) {
        case FormatFailure::none: return "none";
        case FormatFailure::missing_tag: return "missing_tag";
        case FormatFailure::tag_order: return "tag_order";
        case FormatFailure::empty_think: return "empty_think";
        case FormatFailure::unparseable_answer: return "unparseable_answer";
        case FormatFailure::unknown_action: return "unknown_action";
        case FormatFailure::velocity_out_of_range: return "velocity_out_of_range";
        case FormatFailure::trailing_garbage: return "trailing_garbage";
    }
    return "none";
}

std::optional<FormatFailure> format_failure_from_string(std::string_view name) {
    if (name == "none") {
        return FormatFailure::none;
    }
    for (FormatFailure f : kAllFormatFailures) {
        if (to_string(f) == name) {
            return f;
        }
    }
    return std::nullopt;
}

bool contains_structural_tag(std::string_view text) {
    return text.find(kThinkOpen) != std::string_view::npos ||
           text.find(kThinkClose) != std::string_view::npos ||
           text.find(kAnswerOpen) != std::string_view::npos ||
           text.find(kAnswerClose) != std::string_view::npos;
}

bool is_blank(std::string_view text) { return std::all_of(text.begin(), text.end(), is_space); }

std::string_view trim_ascii(std::string_view text) {
    while (!text.empty() && is_space(text.front())) {
        text.remove_prefix(1);
    }
    while (!text.empty() && is_space(text.back())) {
        text.remove_suffix(1);
    }
    return text;
}

TagSplit split_tags(std::string_view raw) {
    const std::string_view s = trim_ascii(raw);
    const std::string_view tags[] = {kThinkOpen, kThinkClose, kAnswerOpen, kAnswerClose};

    bool duplicated = false;
    for (std::string_view tag : tags) {
        const std::size_t n = count_occurrences(s, tag);
        if (n == 0) {
            return {std::nullopt, FormatFailure::missing_tag};
        }
        duplicated = duplicated || n > 1;
    }
    if (duplicated) {
        return {std::nullopt, FormatFailure::tag_order};
    }

    const std::size_t think_open = s.find(kThinkOpen);
    const std::size_t think_close = s.find(kThinkClose);
    const std::size_t answer_open = s.find(kAnswerOpen);
    const std::size_t answer_close = s.find(kAnswerClose);
    if (!(think_open < think_close && think_close < answer_open && answer_open < answer_close)) {
        return {std::nullopt, FormatFailure::tag_order};
    }
    if (think_open != 0 || answer_open != think_close + kThinkClose.size() ||
        answer_close + kAnswerClose.size() != s.size()) {
        return {std::nullopt, FormatFailure::trailing_garbage};
    }

    const std::size_t think_begin = think_open + kThinkOpen.size();
    std::string_view think = s.substr(think_begin, think_close - think_begin);
    if (is_blank(think)) {
        return {std::nullopt, FormatFailure::empty_think};
    }
    const std::size_t answer_begin = answer_open + kAnswerOpen.size();
    std::string_view answer = s.substr(answer_begin, answer_close - answer_begin);
    return {TaggedText{std::string(think), std::string(answer)}, FormatFailure::none};
}

FormatVerdict check_structure(std::string_view raw) {
    const TagSplit split = split_tags(raw);
    return split.parts ? FormatVerdict::ok() : FormatVerdict::fail(split.failure);
}

AnswerParse parse_answer(std::string_view answer, const ActionRegistry& registry,
                         const VelocityLimits& limits) {
    constexpr std::string_view keys[] = {"vx=", " vy=", " wyaw="};
    double values[3] = {};
    std::string_view rest = answer;
    for (int k = 0; k < 3; ++k) {
        if (!take_literal(rest, keys[k])) {
            return {std::nullopt, FormatFailure::unparseable_answer};
        }
        const auto number = take_number(rest);
        if (!number) {
            return {std::nullopt, FormatFailure::unparseable_answer};
        }
        values[k] = to_double(*number);
    }
    if (!take_literal(rest, " action=") || !is_label(rest)) {
        return {std::nullopt, FormatFailure::unparseable_answer};
    }
    if (!registry.contains(rest)) {
        return {std::nullopt, FormatFailure::unknown_action};
    }
    ControlCommand command{values[0], values[1], values[2], std::string(rest)};
    if (!is_valid_command(command, registry, limits)) {
        return {std::nullopt, FormatFailure::velocity_out_of_range};
    }
    return {std::move(command), FormatFailure::none};
}

bool is_valid_command(const ControlCommand& c, const ActionRegistry& registry,
                      const VelocityLimits& limits) {
    const auto within = [](double v, double bound) { return std::isfinite(v) && std::abs(v) <= bound; };
    return within(c.vx, limits.v_max) && within(c.vy, limits.v_max) && within(c.wyaw, limits.w_max) &&
           registry.contains(c.action);
}

ParseOutcome parse_response(std::string_view raw, const ActionRegistry& registry,
                            const VelocityLimits& limits) {
    TagSplit split = split_tags(raw);
    if (!split.parts) {
        return {std::nullopt, split.failure};
    }
    AnswerParse answer = parse_answer(split.parts->answer, registry, limits);
    if (!answer.command) {
        return {std::nullopt, answer.failure};
    }
    return {ParsedResponse{std::move(split.parts->think), std::move(*answer.command), std::string(raw)},
            FormatFailure::none};
}

FormatVerdict check_format(std::string_view raw, const ActionRegistry& registry,
                           const VelocityLimits& limits) {
    return parse_response(raw, registry, limits).verdict();
}

FormatVerdict check_format(std::string_view raw) {
    static const ActionRegistry registry;
    return check_format(raw, registry, VelocityLimits{});
}

std::string format_velocity(double value) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f", value);
    return buf;
}

double quantize_velocity(double value) { return std::round(value * 1000.0) / 1000.0; }

ControlCommand quantize(ControlCommand command) {
    command.vx = quantize_velocity(command.vx);
    command.vy = quantize_velocity(command.vy);
    command.wyaw = quantize_velocity(command.wyaw);
    return command;
}

std::string serialize_answer(const ControlCommand& c) {
    if (!std::isfinite(c.vx) || !std::isfinite(c.vy) || !std::isfinite(c.wyaw)) {
        throw std::invalid_argument("cannot serialize non-finite velocity");
    }
    if (!is_label(c.action)) {
        throw std::invalid_argument("action label '" + c.action + "' is not a token");
    }
    std::string out;
    out.reserve(64);
    out += "vx=";
    out += format_velocity(c.vx);
    out += " vy=";
    out += format_velocity(c.vy);
    out += " wyaw=";
    out += format_velocity(c.wyaw);
    out += " action=";
    out += c.action;
    return out;
}

std::string serialize_free(std::string_view think, std::string_view answer) {
    if (is_blank(think)) {
        throw std::invalid_argument("think text must not be empty");
    }
    if (contains_structural_tag(think) || contains_structural_tag(answer)) {
        throw std::invalid_argument("text must not contain structural tags");
    }
    std::string out;
    out.reserve(think.size() + answer.size() + 32);
    out += kThinkOpen;
    out += think;
    out += kThinkClose;
    out += kAnswerOpen;
    out += answer;
    out += kAnswerClose;
    return out;
}

std::string serialize(std::string_view think, const ControlCommand& command) {
    return serialize_free(think, serialize_answer(command));
}

}  // namespace mvla

namespace mvla {

std::string_view think_phrase(Maneuver maneuver) {
    switch (maneuver) {
        case Maneuver::forward: return "the path ahead is clear so I walk forward";
        case Maneuver::turn_left: return "the path bends to my left so I turn left";
        case Maneuver::turn_right: return "the path bends to my right so I turn right";
        case Maneuver::stop: return "I am close enough to the goal so I stop";
        case Maneuver::crawl: return "this is the low passage so I crawl through it";
        case Maneuver::unload: return "this is the drop-off zone so I unload here";
        case Maneuver::distinguish: return "the target object is here so I distinguish it";
    }
    return "";
}

const std::vector<std::string>& think_phrases() {
    static const std::vector<std::string> phrases = [] {
        std::vector<std::string> out;
        for (Maneuver m : {Maneuver::forward, Maneuver::turn_left, Maneuver::turn_right, Maneuver::stop,
                           Maneuver::crawl, Maneuver::unload, Maneuver::distinguish}) {
            out.emplace_back(think_phrase(m));
        }
        return out;
    }();
    return phrases;
}

}  // namespace mvla
