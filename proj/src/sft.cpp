#include "mvla/sft.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "mvla/rng.hpp"

namespace mvla::sft {

void SftConfig::validate() const {
    if (epochs < 1) {
        throw std::invalid_argument("sft.epochs must be >= 1");
    }
    if (batch_size < 1) {
        throw std::invalid_argument("sft.batch_size must be >= 1");
    }
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
        throw std::invalid_argument("sft.learning_rate must be finite and >= 0");
    }
}

int instruction_id_for(std::string_view text) {
    for (int i = 0; i < env::kInstructionCount; ++i) {
        if (env::instruction_text(i) == text) {
            return i;
        }
    }
    return 0;
}

SftExample make_example(const data::CotSample& sample, const Vocabulary& vocab, std::size_t max_length) {
    const std::string text = sample.raw.empty() ? serialize_free(sample.think, sample.answer) : sample.raw;
    auto tokens = vocab.tokenize(text);
    if (!tokens) {
        throw std::invalid_argument("record " + sample.id + " is not tokenizable");
    }
    if (tokens->size() > max_length) {
        throw std::invalid_argument("record " + sample.id + " has " + std::to_string(tokens->size()) +
                                    " tokens, limit " + std::to_string(max_length));
    }
    SftExample ex;
    ex.context.features = data::parse_observation_digest(sample.observation_digest);
    ex.context.instruction_id = instruction_id_for(sample.instruction);
    ex.tokens = std::move(*tokens);
    return ex;
}

std::vector<SftExample> make_examples(std::span<const data::CotSample> samples, const Vocabulary& vocab,
                                      std::size_t max_length) {
    std::vector<SftExample> out;
    out.reserve(samples.size());
    for (const data::CotSample& s : samples) {
        out.push_back(make_example(s, vocab, max_length));
    }
    return out;
}

double nll_loss(const PolicyParams& params, std::span<const SftExample> batch, PolicyParams* grad) {
    if (batch.empty()) {
        return 0.0;
    }
    const double n = static_cast<double>(batch.size());
    double total = 0.0;
    for (const SftExample& ex : batch) {
        if (ex.tokens.size() > params.config().max_length) {
            throw std::invalid_argument("sequence longer than max_length");
        }
        if (grad) {
            total -= accumulate_logprob_gradient(params, ex.context, ex.tokens, -1.0 / n, *grad);
        } else {
            total -= sequence_logprob(params, ex.context, ex.tokens);
        }
    }
    return total / n;
}

PolicyParams train_sft(PolicyParams params, std::span<const SftExample> examples, const SftConfig& config,
                       const EpochCallback& on_epoch) {
    config.validate();
    if (examples.empty()) {
        throw std::invalid_argument("sft dataset is empty");
    }
    std::vector<std::size_t> order(examples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<SftExample> batch;
    PolicyParams grad(params.config(), params.vocab_size());
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        Rng rng(derive_seed(config.seed, epoch));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng.below(i)]);
        }
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            batch.clear();
            for (std::size_t k = start; k < std::min(order.size(), start + config.batch_size); ++k) {
                batch.push_back(examples[order[k]]);
            }
            grad.set_zero();
            loss_sum += nll_loss(params, batch, &grad);
            ++batches;
            if (!grad.all_finite()) {
                throw NonFiniteError("non-finite sft gradient");
            }
            params.axpy(-config.learning_rate, grad);
        }
        if (on_epoch) {
            on_epoch({epoch, loss_sum / static_cast<double>(batches)});
        }
    }
    return params;
}

PolicyParams train_sft(PolicyParams params, const data::DatasetManifest& manifest, const Vocabulary& vocab,
                       const SftConfig& config, const EpochCallback& on_epoch) {
    for (const data::CotSample& s : manifest.samples) {
        if (!s.verified) {
            throw std::invalid_argument("sft manifest contains unverified record " + s.id);
        }
    }
    const std::vector<SftExample> examples = make_examples(manifest.samples, vocab, params.config().max_length);
    return train_sft(std::move(params), examples, config, on_epoch);
}

ReferencePolicy::ReferencePolicy(const PolicyParams& params)
    : params_(std::make_shared<const PolicyParams>(params)) {}

ReferencePolicy freeze_reference(const PolicyParams& params) {
    if (!params.all_finite()) {
        throw NonFiniteError("cannot freeze a non-finite policy");
    }
    return ReferencePolicy(params);
}

}  // namespace mvla::sft
