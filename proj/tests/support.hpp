#pragma once

// Test-side oracles shared by the unit and acceptance suites. Everything here
// is written independently of the library internals it checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "mvla/policy.hpp"
#include "mvla/rng.hpp"

namespace mvla::testing {

// Straight-line evaluation of the policy network. Returns the log-probability
// of `tokens` and, if `dists` is non-null, the per-step distributions.
inline double reference_logprob(const PolicyParams& p, const ObservationContext& ctx,
                                const std::vector<TokenId>& tokens,
                                std::vector<std::vector<double>>* dists = nullptr) {
    const auto& c = p.config();
    const std::size_t H = c.hidden_dim, E = c.embed_dim, V = p.vocab_size(), F = c.feature_dim;
    std::vector<double> prev(H, 0.0);
    double total = 0.0;
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        const std::size_t prev_tok = t == 0 ? V : tokens[t - 1];
        std::vector<double> h(H);
        for (std::size_t j = 0; j < H; ++j) {
            double a = p.at(p.context_projection(), F, j) + p.at(p.position_embedding(), t, j);
            for (std::size_t i = 0; i < F; ++i) {
                a += ctx.features[i] * p.at(p.context_projection(), i, j);
            }
            for (std::size_t i = 0; i < E; ++i) {
                a += p.at(p.token_embedding(), prev_tok, i) * p.at(p.token_to_hidden(), i, j);
            }
            for (std::size_t i = 0; i < H; ++i) {
                a += prev[i] * p.at(p.recurrent_weights(), i, j);
            }
            h[j] = std::tanh(a);
        }
        std::vector<double> z(V);
        for (std::size_t k = 0; k < V; ++k) {
            double s = p.at(p.output_bias(), 0, k);
            for (std::size_t i = 0; i < H; ++i) {
                s += h[i] * p.at(p.output_weights(), i, k);
            }
            for (std::size_t i = 0; i < E; ++i) {
                s += p.at(p.token_embedding(), prev_tok, i) * p.at(p.output_weights(), H + i, k);
            }
            z[k] = s;
        }
        const double m = *std::max_element(z.begin(), z.end());
        double norm = 0.0;
        for (double v : z) {
            norm += std::exp(v - m);
        }
        std::vector<double> q(V);
        for (std::size_t k = 0; k < V; ++k) {
            q[k] = std::exp(z[k] - m) / norm;
        }
        total += std::log(q[tokens[t]]);
        if (dists) {
            dists->push_back(q);
        }
        prev = h;
    }
    return total;
}

// Central differences over every parameter; returns the worst entrywise
// relative error |a - n| / max(|a|, |n|, floor).
inline double max_relative_fd_error(const PolicyParams& params, const std::function<double(const PolicyParams&)>& f,
                                    const PolicyParams& analytic, double h = 1e-5, double floor = 1e-6) {
    double worst = 0.0;
    PolicyParams probe = params;
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double x = params.data()[i];
        probe.data()[i] = x + h;
        const double up = f(probe);
        probe.data()[i] = x - h;
        const double down = f(probe);
        probe.data()[i] = x;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic.data()[i];
        const double denom = std::max({std::abs(a), std::abs(numeric), floor});
        worst = std::max(worst, std::abs(a - numeric) / denom);
    }
    return worst;
}

inline ObservationContext random_context(std::size_t dim, Rng& rng) {
    ObservationContext ctx;
    for (std::size_t i = 0; i < dim; ++i) {
        ctx.features.push_back(rng.uniform(-1.0, 1.0));
    }
    return ctx;
}

inline std::vector<TokenId> random_sequence(std::size_t length, std::size_t vocab, Rng& rng) {
    std::vector<TokenId> s;
    for (std::size_t i = 0; i < length; ++i) {
        s.push_back(static_cast<TokenId>(rng.below(vocab)));
    }
    return s;
}

// A five-token vocabulary used where the full grammar would be too large.
inline Vocabulary toy_vocabulary() { return Vocabulary({"", "a", "b", "c", "d"}, 0); }

inline PolicyConfig toy_config() {
    PolicyConfig c;
    c.feature_dim = 3;
    c.embed_dim = 2;
    c.hidden_dim = 3;
    c.max_length = 6;
    c.init_scale = 0.8;
    return c;
}

}  // namespace mvla::testing
