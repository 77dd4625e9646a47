#include "mvla/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "mvla/rng.hpp"

namespace mvla {

namespace {

double log_sum_exp(std::span<const double> z) {
    const double m = *std::max_element(z.begin(), z.end());
    double s = 0.0;
    for (double v : z) {
        s += std::exp(v - m);
    }
    return m + std::log(s);
}

struct StepInput {
    std::size_t position;
    std::size_t prev_row;  // row of the embedding table
};

std::size_t prev_row_for(const PolicyParams& p, std::span<const TokenId> tokens, std::size_t t) {
    return t == 0 ? p.vocab_size() : tokens[t - 1];
}

// P^T [features; 1]
std::vector<double> context_activation(const PolicyParams& p, const ObservationContext& context) {
    const auto& cfg = p.config();
    if (context.features.size() != cfg.feature_dim) {
        throw std::invalid_argument("observation has " + std::to_string(context.features.size()) +
                                    " features, policy expects " + std::to_string(cfg.feature_dim));
    }
    const auto& proj = p.context_projection();
    std::vector<double> a(cfg.hidden_dim, 0.0);
    for (std::size_t i = 0; i <= cfg.feature_dim; ++i) {
        const double x = i < cfg.feature_dim ? context.features[i] : 1.0;
        if (x == 0.0) {
            continue;
        }
        const auto w = p.row(proj, i);
        for (std::size_t j = 0; j < cfg.hidden_dim; ++j) {
            a[j] += x * w[j];
        }
    }
    return a;
}

// Fills hidden (H) and logits (V) for one step; `prev_hidden` is empty at t = 0.
void step_forward(const PolicyParams& p, std::span<const double> ctx, StepInput in,
                  std::span<const double> prev_hidden, std::span<double> hidden, std::span<double> logits) {
    const auto& cfg = p.config();
    const std::size_t H = cfg.hidden_dim;
    const std::size_t E = cfg.embed_dim;
    const std::size_t V = p.vocab_size();
    const auto e = p.row(p.token_embedding(), in.prev_row);
    const auto pos = p.row(p.position_embedding(), in.position);
    const auto& u = p.token_to_hidden();
    for (std::size_t j = 0; j < H; ++j) {
        hidden[j] = ctx[j] + pos[j];
    }
    for (std::size_t i = 0; i < E; ++i) {
        const auto ui = p.row(u, i);
        for (std::size_t j = 0; j < H; ++j) {
            hidden[j] += e[i] * ui[j];
        }
    }
    const auto& r = p.recurrent_weights();
    for (std::size_t i = 0; i < prev_hidden.size(); ++i) {
        const auto ri = p.row(r, i);
        for (std::size_t j = 0; j < H; ++j) {
            hidden[j] += prev_hidden[i] * ri[j];
        }
    }
    for (std::size_t j = 0; j < H; ++j) {
        hidden[j] = std::tanh(hidden[j]);
    }
    const auto bias = p.row(p.output_bias(), 0);
    std::copy(bias.begin(), bias.end(), logits.begin());
    const auto& w = p.output_weights();
    for (std::size_t i = 0; i < H + E; ++i) {
        const double x = i < H ? hidden[i] : e[i - H];
        if (x == 0.0) {
            continue;
        }
        const auto wi = p.row(w, i);
        for (std::size_t k = 0; k < V; ++k) {
            logits[k] += x * wi[k];
        }
    }
}

void check_position(const PolicyParams& p, std::size_t position) {
    if (position >= p.config().max_length) {
        throw std::invalid_argument("sequence position " + std::to_string(position) + " exceeds max length " +
                                    std::to_string(p.config().max_length));
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

Vocabulary::Vocabulary(std::vector<std::string> surfaces, TokenId eos) : surfaces_(std::move(surfaces)), eos_(eos) {
    if (surfaces_.empty() || surfaces_.size() > kMaxSize) {
        throw std::invalid_argument("vocabulary size must be in [1, 64]");
    }
    if (eos_ >= surfaces_.size()) {
        throw std::invalid_argument("eos index out of range");
    }
    for (std::size_t i = 0; i < surfaces_.size(); ++i) {
        if (surfaces_[i].empty() && i != eos_) {
            throw std::invalid_argument("only the eos token may have an empty surface");
        }
        for (std::size_t j = 0; j < i; ++j) {
            if (surfaces_[i] == surfaces_[j]) {
                throw std::invalid_argument("duplicate vocabulary token '" + surfaces_[i] + "'");
            }
        }
    }
}

Vocabulary Vocabulary::response_grammar(const ActionRegistry& registry, const VelocityLimits& limits) {
    std::vector<std::string> s;
    s.emplace_back("");  // eos
    for (std::string_view tag : {kThinkOpen, kThinkClose, kAnswerOpen, kAnswerClose}) {
        s.emplace_back(tag);
    }
    for (const auto& phrase : think_phrases()) {
        s.push_back(phrase);
    }
    for (std::string_view key : {"vx=", " vy=", " wyaw=", " action="}) {
        s.emplace_back(key);
    }
    const int max_int = static_cast<int>(std::floor(std::max(limits.v_max, limits.w_max)));
    for (int i = 0; i <= max_int; ++i) {
        s.push_back(std::to_string(i) + ".");
        s.push_back("-" + std::to_string(i) + ".");
    }
    for (char d = '0'; d <= '9'; ++d) {
        s.emplace_back(1, d);
    }
    for (const auto& label : registry.labels()) {
        s.push_back(label);
    }
    s.emplace_back(kPhraseSeparator);
    s.emplace_back(kGoalReached);
    s.emplace_back(kGoalMissed);
    return Vocabulary(std::move(s), 0);
}

std::optional<TokenId> Vocabulary::find(std::string_view surface) const {
    for (std::size_t i = 0; i < surfaces_.size(); ++i) {
        if (surfaces_[i] == surface) {
            return static_cast<TokenId>(i);
        }
    }
    return std::nullopt;
}

std::optional<std::vector<TokenId>> Vocabulary::tokenize(std::string_view text) const {
    std::vector<TokenId> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t best_len = 0;
        TokenId best = 0;
        for (std::size_t i = 0; i < surfaces_.size(); ++i) {
            const auto& s = surfaces_[i];
            if (s.size() > best_len && text.compare(pos, s.size(), s) == 0) {
                best_len = s.size();
                best = static_cast<TokenId>(i);
            }
        }
        if (best_len == 0) {
            return std::nullopt;
        }
        out.push_back(best);
        pos += best_len;
    }
    out.push_back(eos_);
    return out;
}

std::string Vocabulary::detokenize(std::span<const TokenId> tokens) const {
    std::string out;
    for (TokenId t : tokens) {
        out += surfaces_.at(t);
    }
    return out;
}

std::string Vocabulary::digest() const {
    std::uint64_t h = fnv1a64("vocabulary");
    for (const auto& s : surfaces_) {
        h = fnv1a64(s, h);
        h = fnv1a64("\x1f", h);
    }
    h = fnv1a64(std::to_string(eos_), h);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------------------
// Parameters

void PolicyConfig::validate() const {
    if (feature_dim == 0 || embed_dim == 0 || hidden_dim == 0 || max_length == 0) {
        throw std::invalid_argument("policy dimensions must be positive");
    }
    if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) {
        throw std::invalid_argument("policy init_scale must be finite and nonnegative");
    }
}

PolicyParams::PolicyParams(const PolicyConfig& config, std::size_t vocab_size)
    : config_(config), vocab_size_(vocab_size) {
    config_.validate();
    if (vocab_size == 0) {
        throw std::invalid_argument("vocabulary must not be empty");
    }
    const std::size_t V = vocab_size, E = config.embed_dim, H = config.hidden_dim;
    const std::size_t C = config.feature_dim, L = config.max_length;
    std::size_t offset = 0;
    const auto add = [&](std::string_view name, std::size_t rows, std::size_t cols) {
        layout_.push_back({name, rows, cols, offset});
        offset += rows * cols;
    };
    add("token_embedding", V + 1, E);
    add("context_projection", C + 1, H);
    add("token_to_hidden", E, H);
    add("position_embedding", L, H);
    add("output_weights", H + E, V);
    add("output_bias", 1, V);
    add("recurrent_weights", H, H);
    data_.assign(offset, 0.0);
}

PolicyParams PolicyParams::random(const PolicyConfig& config, std::size_t vocab_size, std::uint64_t seed) {
    PolicyParams p(config, vocab_size);
    Rng rng(derive_seed(seed, 0x706f6c696379ULL));
    for (double& v : p.data_) {
        v = rng.uniform(-config.init_scale, config.init_scale);
    }
    return p;
}

void PolicyParams::set_zero() { std::fill(data_.begin(), data_.end(), 0.0); }

bool PolicyParams::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

bool PolicyParams::same_shape(const PolicyParams& other) const {
    return config_ == other.config_ && vocab_size_ == other.vocab_size_;
}

void PolicyParams::axpy(double scale, const PolicyParams& other) {
    if (!same_shape(other)) {
        throw std::invalid_argument("parameter shape mismatch");
    }
    for (std::size_t i = 0; i < data_.size(); ++i) {
        data_[i] += scale * other.data_[i];
    }
}

double PolicyParams::norm() const {
    double s = 0.0;
    for (double v : data_) {
        s += v * v;
    }
    return std::sqrt(s);
}

// ---------------------------------------------------------------------------
// Forward / backward

std::vector<double> token_logits(const PolicyParams& params, const ObservationContext& context,
                                 std::span<const TokenId> prefix) {
    check_position(params, prefix.size());
    const auto ctx = context_activation(params, context);
    const std::size_t H = params.config().hidden_dim;
    std::vector<double> prev_hidden, hidden(H);
    std::vector<double> logits(params.vocab_size());
    for (std::size_t t = 0; t <= prefix.size(); ++t) {
        if (t < prefix.size() && prefix[t] >= params.vocab_size()) {
            throw std::invalid_argument("token id out of range");
        }
        step_forward(params, ctx, {t, prev_row_for(params, prefix, t)}, prev_hidden, hidden, logits);
        prev_hidden = hidden;
    }
    return logits;
}

std::vector<double> token_distribution(const PolicyParams& params, const ObservationContext& context,
                                       std::span<const TokenId> prefix) {
    auto z = token_logits(params, context, prefix);
    const double lse = log_sum_exp(z);
    for (double& v : z) {
        v = std::exp(v - lse);
    }
    return z;
}

ForwardPass forward(const PolicyParams& params, const ObservationContext& context,
                    std::span<const TokenId> tokens) {
    const std::size_t T = tokens.size();
    const std::size_t H = params.config().hidden_dim;
    const std::size_t V = params.vocab_size();
    if (T > params.config().max_length) {
        throw std::invalid_argument("sequence longer than max length");
    }
    ForwardPass pass;
    pass.tokens.assign(tokens.begin(), tokens.end());
    pass.context_activation = context_activation(params, context);
    pass.hidden.resize(T * H);
    pass.log_probs.resize(T * V);
    for (std::size_t t = 0; t < T; ++t) {
        if (tokens[t] >= V) {
            throw std::invalid_argument("token id out of range");
        }
        std::span<double> hidden(pass.hidden.data() + t * H, H);
        std::span<double> lp(pass.log_probs.data() + t * V, V);
        const std::span<const double> prev_hidden =
            t == 0 ? std::span<const double>{} : std::span<const double>(pass.hidden.data() + (t - 1) * H, H);
        step_forward(params, pass.context_activation, {t, prev_row_for(params, tokens, t)}, prev_hidden, hidden, lp);
        const double lse = log_sum_exp(lp);
        for (double& v : lp) {
            v -= lse;
        }
        pass.logprob += lp[tokens[t]];
    }
    return pass;
}

double sequence_logprob(const PolicyParams& params, const ObservationContext& context,
                        std::span<const TokenId> tokens) {
    if (tokens.empty()) {
        return 0.0;
    }
    return forward(params, context, tokens).logprob;
}

void backward(const PolicyParams& p, const ObservationContext& context, const ForwardPass& pass,
              std::span<const double> dlogits, PolicyParams& grad) {
    if (!grad.same_shape(p)) {
        throw std::invalid_argument("gradient shape mismatch");
    }
    const auto& cfg = p.config();
    const std::size_t H = cfg.hidden_dim, E = cfg.embed_dim, V = p.vocab_size(), C = cfg.feature_dim;
    const std::size_t T = pass.steps();
    if (dlogits.size() != T * V) {
        throw std::invalid_argument("dlogits has wrong size");
    }
    const auto& emb = p.token_embedding();
    const auto& u = p.token_to_hidden();
    const auto& w = p.output_weights();

    const auto& r = p.recurrent_weights();

    std::vector<double> da_context(H, 0.0);
    std::vector<double> du(H + E);
    std::vector<double> da(H);
    std::vector<double> carry(H, 0.0);  // d loss / d h_t from later steps
    for (std::size_t t = T; t-- > 0;) {
        const auto dz = dlogits.subspan(t * V, V);
        const std::size_t prev = prev_row_for(p, pass.tokens, t);
        const auto e = p.row(emb, prev);
        const double* h = pass.hidden.data() + t * H;

        auto gb = grad.row(grad.output_bias(), 0);
        for (std::size_t k = 0; k < V; ++k) {
            gb[k] += dz[k];
        }
        for (std::size_t i = 0; i < H + E; ++i) {
            const double x = i < H ? h[i] : e[i - H];
            const auto wi = p.row(w, i);
            auto gwi = grad.row(w, i);
            double acc = 0.0;
            for (std::size_t k = 0; k < V; ++k) {
                gwi[k] += x * dz[k];
                acc += wi[k] * dz[k];
            }
            du[i] = acc;
        }
        for (std::size_t j = 0; j < H; ++j) {
            da[j] = (du[j] + carry[j]) * (1.0 - h[j] * h[j]);
            da_context[j] += da[j];
        }
        std::fill(carry.begin(), carry.end(), 0.0);
        if (t > 0) {
            const double* hp = pass.hidden.data() + (t - 1) * H;
            for (std::size_t i = 0; i < H; ++i) {
                const auto ri = p.row(r, i);
                auto gri = grad.row(r, i);
                double acc = 0.0;
                for (std::size_t j = 0; j < H; ++j) {
                    gri[j] += hp[i] * da[j];
                    acc += ri[j] * da[j];
                }
                carry[i] = acc;
            }
        }
        auto gpos = grad.row(p.position_embedding(), t);
        for (std::size_t j = 0; j < H; ++j) {
            gpos[j] += da[j];
        }
        auto ge = grad.row(emb, prev);
        for (std::size_t i = 0; i < E; ++i) {
            const auto ui = p.row(u, i);
            auto gui = grad.row(u, i);
            double acc = du[H + i];
            for (std::size_t j = 0; j < H; ++j) {
                gui[j] += e[i] * da[j];
                acc += ui[j] * da[j];
            }
            ge[i] += acc;
        }
    }
    const auto& proj = p.context_projection();
    for (std::size_t i = 0; i <= C; ++i) {
        const double x = i < C ? context.features[i] : 1.0;
        if (x == 0.0) {
            continue;
        }
        auto gi = grad.row(proj, i);
        for (std::size_t j = 0; j < H; ++j) {
            gi[j] += x * da_context[j];
        }
    }
}

double accumulate_logprob_gradient(const PolicyParams& params, const ObservationContext& context,
                                   std::span<const TokenId> tokens, double coef, PolicyParams& grad) {
    if (tokens.empty()) {
        return 0.0;
    }
    const ForwardPass pass = forward(params, context, tokens);
    const std::size_t V = params.vocab_size();
    std::vector<double> dz(pass.steps() * V);
    for (std::size_t t = 0; t < pass.steps(); ++t) {
        for (std::size_t k = 0; k < V; ++k) {
            const double prob = std::exp(pass.log_probs[t * V + k]);
            dz[t * V + k] = coef * ((k == tokens[t] ? 1.0 : 0.0) - prob);
        }
    }
    backward(params, context, pass, dz, grad);
    return pass.logprob;
}

// ---------------------------------------------------------------------------
// Sampling

SampledResponse sample_response(const PolicyParams& params, const Vocabulary& vocab,
                                const ObservationContext& context, std::uint64_t seed) {
    if (vocab.size() != params.vocab_size()) {
        throw std::invalid_argument("vocabulary does not match policy parameters");
    }
    Rng rng(seed);
    const std::size_t H = params.config().hidden_dim;
    const std::size_t V = params.vocab_size();
    const auto ctx = context_activation(params, context);
    std::vector<double> prev_hidden, hidden(H);
    SampledResponse out;
    for (std::size_t t = 0; t < params.config().max_length; ++t) {
        std::vector<double> logits(V);
        const std::size_t prev = t == 0 ? V : out.tokens.back();
        step_forward(params, ctx, {t, prev}, prev_hidden, hidden, logits);
        prev_hidden = hidden;
        const double lse = log_sum_exp(logits);
        const double u = rng.uniform();
        double cum = 0.0;
        TokenId chosen = static_cast<TokenId>(V - 1);
        for (std::size_t k = 0; k < V; ++k) {
            cum += std::exp(logits[k] - lse);
            if (u < cum) {
                chosen = static_cast<TokenId>(k);
                break;
            }
        }
        out.logprob += logits[chosen] - lse;
        out.tokens.push_back(chosen);
        out.step_logits.push_back(std::move(logits));
        if (chosen == vocab.eos()) {
            break;
        }
    }
    out.text = vocab.detokenize(out.tokens);
    return out;
}

std::vector<SampledResponse> sample_group(const PolicyParams& params, const Vocabulary& vocab,
                                          const ObservationContext& context, std::size_t n,
                                          std::uint64_t seed) {
    std::vector<SampledResponse> group;
    group.reserve(n);
    for (std::size_t j = 0; j < n; ++j) {
        group.push_back(sample_response(params, vocab, context, derive_seed(seed, j)));
    }
    return group;
}

PolicyParams objective_gradient(const PolicyParams& params, const Objective& objective, double* value) {
    PolicyParams grad(params.config(), params.vocab_size());
    const double v = objective(params, &grad);
    if (!std::isfinite(v)) {
        throw NonFiniteError("objective value is not finite");
    }
    if (!grad.all_finite()) {
        throw NonFiniteError("objective gradient has non-finite entries");
    }
    if (value != nullptr) {
        *value = v;
    }
    return grad;
}

}  // namespace mvla
