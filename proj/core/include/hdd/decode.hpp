#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hdd/error.hpp"
#include "hdd/fusion.hpp"
#include "hdd/provider.hpp"
#include "hdd/types.hpp"

namespace hdd {

struct DecodeOptions {
    std::uint64_t seed = 0;
    // Issue the four per-step fetches concurrently.
    bool concurrent_fetch = true;
};

struct DecodeState {
    TokenSequence prompt_tokens;
    TokenSequence generated;
    ImageQuad quad;
    std::vector<StepDiagnostics> step_diagnostics;
    std::vector<double> per_token_latency_ms;
    double total_ms = 0.0;
    // Sum of log-probabilities of the emitted tokens under the scored
    // (fused, masked) distribution at the decode temperature.
    double cumulative_log_prob = 0.0;
    bool stopped_at_eos = false;
};

// Thrown when a provider or numerical failure aborts decoding. Carries
// everything generated before the failing step.
class DecodeAborted : public Error {
public:
    DecodeAborted(ErrorKind kind, const std::string& message, DecodeState partial)
        : Error(kind, message), partial_(std::move(partial)) {}

    const DecodeState& partial() const noexcept { return partial_; }

private:
    DecodeState partial_;
};

// Counter-based generator: the n-th draw is a pure function of (seed, n), so
// concurrent decodes never share state.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) noexcept : seed_(seed) {}

    std::uint64_t next() noexcept;
    // Uniform in [0, 1) with 53 bits of resolution.
    double uniform() noexcept;

private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

// Samples an index from probs by inverse CDF; zero-probability entries are
// never chosen.
std::size_t sample_index(std::span<const double> probs, CounterRng& rng);

// HDD generation over the four-image quad.
DecodeState decode(const ImageQuad& quad, const TokenSequence& prompt, const HddConfig& cfg,
                   LogitProvider& provider, const DecodeOptions& opts = {});

// Baseline single-stream generation with the same strategies and no fusion
// or plausibility masking.
DecodeState decode_vanilla(const std::string& image_ref, const TokenSequence& prompt,
                           const HddConfig& cfg, LogitProvider& provider,
                           const DecodeOptions& opts = {});

}  // namespace hdd
