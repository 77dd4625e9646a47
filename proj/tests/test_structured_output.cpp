#include <regex>
#include <string>

#include "doctest.h"
#include "mvla/rng.hpp"
#include "mvla/structured_output.hpp"

using namespace mvla;

namespace {

// Independent reading of the grammar: one regex plus the semantic checks.
bool oracle_valid(const std::string& raw, const ActionRegistry& reg, const VelocityLimits& lim) {
    static const std::regex re(
        R"(^\s*<think>([\s\S]*)</think><answer>vx=([+-]?[0-9]+(?:\.[0-9]+)?) vy=([+-]?[0-9]+(?:\.[0-9]+)?) )"
        R"(wyaw=([+-]?[0-9]+(?:\.[0-9]+)?) action=([A-Za-z0-9_]+)</answer>\s*$)");
    std::smatch m;
    if (!std::regex_match(raw, m, re)) {
        return false;
    }
    const std::string think = m[1];
    for (const char* tag : {"<think>", "</think>", "<answer>", "</answer>"}) {
        if (think.find(tag) != std::string::npos) {
            return false;
        }
    }
    if (think.find_first_not_of(" \t\n\r\f\v") == std::string::npos) {
        return false;
    }
    const double vx = std::stod(m[2]), vy = std::stod(m[3]), w = std::stod(m[4]);
    return std::abs(vx) <= lim.v_max && std::abs(vy) <= lim.v_max && std::abs(w) <= lim.w_max &&
           reg.contains(m[5].str());
}

std::string random_think(Rng& rng) {
    static const char alphabet[] = "abcdefghijklmnopqrstuvwxyz ,.;:!?-_()0123456789ABCXYZ\t";
    std::string s;
    const int n = rng.range(1, 40);
    for (int i = 0; i < n; ++i) {
        s += alphabet[rng.below(sizeof alphabet - 1)];
    }
    if (is_blank(s)) {
        s += 'x';
    }
    return s;
}

ControlCommand random_command(Rng& rng, const ActionRegistry& reg) {
    const auto grid = [&](double lim) { return static_cast<double>(rng.range(-1000, 1000)) / 1000.0 * lim; };
    return quantize({grid(1.0), grid(1.0), grid(1.0), reg.labels()[rng.below(reg.size())]});
}

}  // namespace

TEST_CASE("registry validation") {
    CHECK(ActionRegistry().contains("stop"));
    CHECK(ActionRegistry().size() == 5);
    CHECK_THROWS_AS(ActionRegistry(std::vector<std::string>{}), std::invalid_argument);
    CHECK_THROWS_AS(ActionRegistry({"move"}), std::invalid_argument);
    CHECK_THROWS_AS(ActionRegistry({"stop", "stop"}), std::invalid_argument);
    CHECK_THROWS_AS(ActionRegistry({"stop", "bad label"}), std::invalid_argument);
    CHECK_FALSE(ActionRegistry().contains("Stop"));
    CHECK(ActionRegistry().digest() == ActionRegistry().digest());
    CHECK(ActionRegistry().digest() != ActionRegistry({"stop", "move"}).digest());
}

TEST_CASE("check_format examples") {
    CHECK(check_format("<think>go forward</think><answer>vx=0.5 vy=0.0 wyaw=0.0 action=move</answer>").valid);
    CHECK(check_format("<think>go</think>vx=0.5 vy=0.0 wyaw=0.0 action=move").failure_reason ==
          FormatFailure::missing_tag);
    CHECK(check_format("<think></think><answer>vx=0 vy=0 wyaw=0 action=stop</answer>").failure_reason ==
          FormatFailure::empty_think);
    CHECK(check_format("").failure_reason == FormatFailure::missing_tag);
    CHECK(check_format("  \n<think>a</think><answer>vx=0 vy=0 wyaw=0 action=stop</answer>\n ").valid);
}

TEST_CASE("parse_response examples") {
    const ActionRegistry reg;
    const VelocityLimits lim;
    const auto ok = parse_response("<think>turn</think><answer>vx=0.0 vy=0.0 wyaw=0.3 action=move</answer>", reg, lim);
    REQUIRE(ok.ok());
    CHECK(ok.response->think == "turn");
    CHECK(ok.response->command == ControlCommand{0.0, 0.0, 0.3, "move"});
    CHECK(parse_response("<think>t</think><answer>vx=0.0 vy=0.0 wyaw=0.3 action=fly</answer>", reg, lim).failure ==
          FormatFailure::unknown_action);
    CHECK(parse_response("<think>t</think><answer>vx=99.0 vy=0.0 wyaw=0.3 action=move</answer>", reg, lim).failure ==
          FormatFailure::velocity_out_of_range);
}

TEST_CASE("failure reasons") {
    const std::string a = "<answer>vx=0.1 vy=0.0 wyaw=0.0 action=move</answer>";
    const auto reason = [](const std::string& raw) { return check_format(raw).failure_reason; };
    CHECK(reason("<think>x</think>") == FormatFailure::missing_tag);
    CHECK(reason("<think>x" + a) == FormatFailure::missing_tag);
    CHECK(reason(a + "<think>x</think>") == FormatFailure::tag_order);
    CHECK(reason("<think>x</think><think>y</think>" + a) == FormatFailure::tag_order);
    CHECK(reason("<think>x</think> " + a) == FormatFailure::trailing_garbage);
    CHECK(reason("hi <think>x</think>" + a) == FormatFailure::trailing_garbage);
    CHECK(reason("<think>x</think>" + a + " bye") == FormatFailure::trailing_garbage);
    CHECK(reason("<think> \t </think>" + a) == FormatFailure::empty_think);
    CHECK(reason("<think>x</think><answer>vx=0.1 vy=0.0 action=move</answer>") == FormatFailure::unparseable_answer);
    CHECK(reason("<think>x</think><answer>vx=1e-1 vy=0.0 wyaw=0.0 action=move</answer>") ==
          FormatFailure::unparseable_answer);
    CHECK(reason("<think>x</think><answer>vx=nan vy=0.0 wyaw=0.0 action=move</answer>") ==
          FormatFailure::unparseable_answer);
    CHECK(reason("<think>x</think><answer>vx=.5 vy=0.0 wyaw=0.0 action=move</answer>") ==
          FormatFailure::unparseable_answer);
    CHECK(reason("<think>x</think><answer>vx=0.1  vy=0.0 wyaw=0.0 action=move</answer>") ==
          FormatFailure::unparseable_answer);
    CHECK(reason("<think>x</think><answer>vx=0.1 vy=0.0 wyaw=0.0 action=Move</answer>") ==
          FormatFailure::unknown_action);
    CHECK(reason("<think>x</think><answer>vx=0.1 vy=0.0 wyaw=-1.0001 action=move</answer>") ==
          FormatFailure::velocity_out_of_range);
    CHECK(check_format("<think>x</think><answer>vx=1.0 vy=-1.0 wyaw=1 action=move</answer>").valid);
}

TEST_CASE("failure names round trip") {
    for (FormatFailure f : kAllFormatFailures) {
        CHECK(format_failure_from_string(to_string(f)) == f);
    }
    CHECK(format_failure_from_string("none") == FormatFailure::none);
    CHECK_FALSE(format_failure_from_string("bogus").has_value());
}

TEST_CASE("serialize examples") {
    CHECK(serialize("go", {0.5, 0, 0, "move"}) ==
          "<think>go</think><answer>vx=0.500 vy=0.000 wyaw=0.000 action=move</answer>");
    CHECK_THROWS_AS(serialize("a</think>b", {0, 0, 0, "stop"}), std::invalid_argument);
    CHECK_THROWS_AS(serialize("  ", {0, 0, 0, "stop"}), std::invalid_argument);
    CHECK_THROWS_AS(serialize("x", {std::nan(""), 0, 0, "stop"}), std::invalid_argument);
    CHECK(format_velocity(-0.0004) == "-0.000");
    CHECK(quantize_velocity(-0.0004) == 0.0);
}

TEST_CASE("round trip of random valid pairs") {
    const ActionRegistry reg;
    const VelocityLimits lim;
    Rng rng(11);
    for (int i = 0; i < 1000; ++i) {
        const std::string think = random_think(rng);
        const ControlCommand cmd = random_command(rng, reg);
        const std::string raw = serialize(think, cmd);
        const auto out = parse_response(raw, reg, lim);
        REQUIRE(out.ok());
        CHECK(out.response->think == think);
        CHECK(out.response->command == cmd);
        CHECK(out.response->raw == raw);
    }
}

TEST_CASE("validity agrees with the regex oracle") {
    const ActionRegistry reg;
    const VelocityLimits lim;
    Rng rng(5);
    const std::vector<std::string> pieces = {
        "<think>", "</think>", "<answer>", "</answer>", "go", " ", "vx=0.5", " vy=0.0", " wyaw=-0.25",
        " action=move", " action=stop", " action=fly", "vx=1.5", "1", ".", "-", "\n", "x"};
    int valid = 0;
    for (int i = 0; i < 4000; ++i) {
        std::string raw;
        if (rng.bernoulli(0.5)) {
            raw = serialize(random_think(rng), random_command(rng, reg));
            // Mutate one position in a well-formed response.
            const std::size_t pos = rng.below(raw.size());
            switch (rng.below(3)) {
                case 0: raw.erase(pos, 1); break;
                case 1: raw.insert(pos, pieces[rng.below(pieces.size())]); break;
                default: break;
            }
        } else {
            const int n = rng.range(0, 8);
            for (int k = 0; k < n; ++k) {
                raw += pieces[rng.below(pieces.size())];
            }
        }
        const FormatVerdict v = check_format(raw, reg, lim);
        CHECK_MESSAGE(v.valid == oracle_valid(raw, reg, lim), raw);
        CHECK(v.valid == (v.failure_reason == FormatFailure::none));
        CHECK(parse_response(raw, reg, lim).verdict() == v);
        valid += v.valid;
    }
    CHECK(valid > 500);
}

TEST_CASE("structural split") {
    const auto s = split_tags("<think>a b</think><answer>goal reached</answer>");
    REQUIRE(s.parts);
    CHECK(s.parts->think == "a b");
    CHECK(s.parts->answer == "goal reached");
    CHECK(check_structure(serialize_free("x", "anything at all")).valid);
    CHECK(check_structure("<think>x</think><answer>a</answer>tail").failure_reason == FormatFailure::trailing_garbage);
}

TEST_CASE("think phrases are tag-free and distinct") {
    const auto& phrases = think_phrases();
    CHECK(phrases.size() == 7);
    for (std::size_t i = 0; i < phrases.size(); ++i) {
        CHECK_FALSE(contains_structural_tag(phrases[i]));
        for (std::size_t j = i + 1; j < phrases.size(); ++j) {
            CHECK(phrases[i] != phrases[j]);
        }
    }
}
