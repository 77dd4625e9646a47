#pragma once

// Teacher-forced likelihood training on verified CoT records.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "mvla/data_engine.hpp"
#include "mvla/policy.hpp"

namespace mvla::sft {

struct SftConfig {
    double learning_rate = 0.05;
    std::size_t epochs = 80;
    std::size_t batch_size = 16;
    std::uint64_t seed = 0;

    void validate() const;
    bool operator==(const SftConfig&) const = default;
};

struct SftExample {
    ObservationContext context;
    std::vector<TokenId> tokens;  // ends with eos
};

// Instruction id whose text matches exactly, else 0.
int instruction_id_for(std::string_view text);

// Throws std::invalid_argument if a record does not tokenize or is longer
// than max_length tokens.
SftExample make_example(const data::CotSample& sample, const Vocabulary& vocab, std::size_t max_length);
std::vector<SftExample> make_examples(std::span<const data::CotSample> samples, const Vocabulary& vocab,
                                      std::size_t max_length);

// Mean over the batch of -sequence_logprob; adds its gradient to *grad.
double nll_loss(const PolicyParams& params, std::span<const SftExample> batch, PolicyParams* grad = nullptr);

struct EpochReport {
    std::size_t epoch = 0;
    double mean_loss = 0.0;  // mean minibatch loss seen during the epoch
};
using EpochCallback = std::function<void(const EpochReport&)>;

// Seeded-shuffle minibatch gradient descent. Throws on an empty dataset.
PolicyParams train_sft(PolicyParams params, std::span<const SftExample> examples, const SftConfig& config,
                       const EpochCallback& on_epoch = {});

// Manifest entry point; every record must be verified.
PolicyParams train_sft(PolicyParams params, const data::DatasetManifest& manifest, const Vocabulary& vocab,
                       const SftConfig& config, const EpochCallback& on_epoch = {});

// Immutable snapshot of a policy, shared cheaply.
class ReferencePolicy {
  public:
    explicit ReferencePolicy(const PolicyParams& params);
    const PolicyParams& params() const { return *params_; }

  private:
    std::shared_ptr<const PolicyParams> params_;
};

// Throws NonFiniteError if any entry is non-finite.
ReferencePolicy freeze_reference(const PolicyParams& params);

}  // namespace mvla::sft
