#pragma once

// Tiny autoregressive categorical policy over the response grammar.
//
//   h_t = tanh(P^T [features; 1] + U^T e(prev_t) + R^T h_{t-1} + pos_t)
//   z_t = W^T [h_t; e(prev_t)] + b,     pi(. | context, prefix) = softmax(z_t)
//
// prev_t is the last prefix token (or the start row of the embedding table)
// and pos_t is a learned per-position hidden offset; h_{-1} = 0.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mvla/structured_output.hpp"

namespace mvla {

using TokenId = std::uint32_t;

class Vocabulary {
  public:
    static constexpr std::size_t kMaxSize = 64;

    // Surfaces must be distinct; `eos` indexes the end-of-sequence token,
    // whose surface is conventionally empty.
    Vocabulary(std::vector<std::string> surfaces, TokenId eos);

    // Structural tags, canned think phrases, answer keys, velocity prefixes
    // ("-1." ... "1."), digits, action labels, summary tokens and eos.
    static Vocabulary response_grammar(const ActionRegistry& registry, const VelocityLimits& limits);

    std::size_t size() const { return surfaces_.size(); }
    TokenId eos() const { return eos_; }
    const std::string& surface(TokenId id) const { return surfaces_.at(id); }
    const std::vector<std::string>& surfaces() const { return surfaces_; }
    std::optional<TokenId> find(std::string_view surface) const;

    // Greedy longest-match tokenization followed by eos; nullopt if some
    // position matches no token.
    std::optional<std::vector<TokenId>> tokenize(std::string_view text) const;
    std::string detokenize(std::span<const TokenId> tokens) const;
    std::string digest() const;

    bool operator==(const Vocabulary&) const = default;

  private:
    std::vector<std::string> surfaces_;
    TokenId eos_;
};

struct ObservationContext {
    std::vector<double> features;
    int instruction_id = 0;
};

struct PolicyConfig {
    std::size_t feature_dim = 13;
    std::size_t embed_dim = 8;
    std::size_t hidden_dim = 32;
    std::size_t max_length = 24;
    double init_scale = 0.05;

    void validate() const;
    bool operator==(const PolicyConfig&) const = default;
};

// Flat parameter vector with named row-major tensor views.
class PolicyParams {
  public:
    struct Tensor {
        std::string_view name;
        std::size_t rows;
        std::size_t cols;
        std::size_t offset;
    };

    PolicyParams() = default;
    PolicyParams(const PolicyConfig& config, std::size_t vocab_size);

    // Uniform in [-init_scale, init_scale].
    static PolicyParams random(const PolicyConfig& config, std::size_t vocab_size, std::uint64_t seed);

    const PolicyConfig& config() const { return config_; }
    std::size_t vocab_size() const { return vocab_size_; }
    std::size_t size() const { return data_.size(); }
    std::span<double> data() { return data_; }
    std::span<const double> data() const { return data_; }

    // (vocab + 1) x embed; the final row is the start-of-sequence embedding.
    const Tensor& token_embedding() const { return layout_[0]; }
    // (features + 1) x hidden; the final row is the hidden bias.
    const Tensor& context_projection() const { return layout_[1]; }
    // embed x hidden
    const Tensor& token_to_hidden() const { return layout_[2]; }
    // max_length x hidden
    const Tensor& position_embedding() const { return layout_[3]; }
    // (hidden + embed) x vocab
    const Tensor& output_weights() const { return layout_[4]; }
    // 1 x vocab
    const Tensor& output_bias() const { return layout_[5]; }
    // hidden x hidden, previous hidden state into the current one
    const Tensor& recurrent_weights() const { return layout_[6]; }
    const std::vector<Tensor>& tensors() const { return layout_; }

    double& at(const Tensor& t, std::size_t r, std::size_t c) { return data_[t.offset + r * t.cols + c]; }
    double at(const Tensor& t, std::size_t r, std::size_t c) const { return data_[t.offset + r * t.cols + c]; }
    std::span<double> row(const Tensor& t, std::size_t r) { return {data_.data() + t.offset + r * t.cols, t.cols}; }
    std::span<const double> row(const Tensor& t, std::size_t r) const {
        return {data_.data() + t.offset + r * t.cols, t.cols};
    }

    void set_zero();
    bool all_finite() const;
    bool same_shape(const PolicyParams& other) const;
    // this += scale * other
    void axpy(double scale, const PolicyParams& other);
    double norm() const;

    bool operator==(const PolicyParams& other) const {
        return config_ == other.config_ && vocab_size_ == other.vocab_size_ && data_ == other.data_;
    }

  private:
    PolicyConfig config_;
    std::size_t vocab_size_ = 0;
    std::vector<Tensor> layout_;
    std::vector<double> data_;
};

// Per-step activations of one scored sequence.
struct ForwardPass {
    std::vector<TokenId> tokens;
    std::vector<double> context_activation;  // hidden_dim, shared by all steps
    std::vector<double> hidden;              // T x hidden_dim
    std::vector<double> log_probs;           // T x vocab
    double logprob = 0.0;                    // sum of realized-token log-probs

    std::size_t steps() const { return tokens.size(); }
    std::span<const double> step_log_probs(std::size_t t, std::size_t vocab) const {
        return {log_probs.data() + t * vocab, vocab};
    }
};

std::vector<double> token_distribution(const PolicyParams& params, const ObservationContext& context,
                                       std::span<const TokenId> prefix);
std::vector<double> token_logits(const PolicyParams& params, const ObservationContext& context,
                                 std::span<const TokenId> prefix);

ForwardPass forward(const PolicyParams& params, const ObservationContext& context,
                    std::span<const TokenId> tokens);
double sequence_logprob(const PolicyParams& params, const ObservationContext& context,
                        std::span<const TokenId> tokens);

// Accumulates d(loss)/d(params) into `grad` given d(loss)/d(logits) per step
// (T x vocab, row-major).
void backward(const PolicyParams& params, const ObservationContext& context, const ForwardPass& pass,
              std::span<const double> dlogits, PolicyParams& grad);

// grad += coef * d logprob(tokens) / d params; returns logprob.
double accumulate_logprob_gradient(const PolicyParams& params, const ObservationContext& context,
                                   std::span<const TokenId> tokens, double coef, PolicyParams& grad);

struct SampledResponse {
    std::vector<TokenId> tokens;
    std::string text;
    double logprob = 0.0;
    std::vector<std::vector<double>> step_logits;

    bool operator==(const SampledResponse&) const = default;
};

// Ancestral sample at unit temperature until eos or max_length.
SampledResponse sample_response(const PolicyParams& params, const Vocabulary& vocab,
                                const ObservationContext& context, std::uint64_t seed);

// Response j draws from the stream derive_seed(seed, j).
std::vector<SampledResponse> sample_group(const PolicyParams& params, const Vocabulary& vocab,
                                          const ObservationContext& context, std::size_t n,
                                          std::uint64_t seed);

// A differentiable scalar functional: returns its value and, when `grad` is
// non-null, adds its gradient to *grad.
using Objective = std::function<double(const PolicyParams& params, PolicyParams* grad)>;

class NonFiniteError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

// Throws NonFiniteError if the value or any gradient entry is non-finite.
PolicyParams objective_gradient(const PolicyParams& params, const Objective& objective,
                                double* value = nullptr);

}  // namespace mvla
