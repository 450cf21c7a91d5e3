#include "hdd/decode.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <future>
#include <limits>

#include "hdd/dist_math.hpp"

namespace hdd {
namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

// Scores for the next token given a prefix, plus the step diagnostics.
struct ScoredStep {
    LogitVector scores;
    StepDiagnostics diag;
    TokenId eos = 0;
};

using Scorer = std::function<ScoredStep(const TokenSequence& prefix)>;

LogitRequest make_request(const std::string& image_ref, const TokenSequence& prompt,
                          const TokenSequence& prefix) {
    return {next_request_id(), image_ref, prompt, prefix};
}

void check_response(const LogitResponse& resp) {
    if (resp.logits.empty() || static_cast<std::int64_t>(resp.logits.size()) != resp.vocab_size) {
        throw Error(ErrorKind::session, "provider returned logits inconsistent with vocab_size");
    }
}

Scorer hdd_scorer(const ImageQuad& quad, const TokenSequence& prompt, const HddConfig& cfg,
                  LogitProvider& provider, bool concurrent) {
    return [&quad, &prompt, &cfg, &provider, concurrent](const TokenSequence& prefix) {
        const std::array<const std::string*, 4> refs = {&quad.original, &quad.segment_a,
                                                        &quad.segment_b, &quad.blank};
        std::array<LogitResponse, 4> resp;
        if (concurrent) {
            std::array<std::future<LogitResponse>, 3> pending;
            for (std::size_t i = 1; i < 4; ++i) {
                pending[i - 1] = std::async(std::launch::async, [&, i] {
                    return provider.fetch_logits(make_request(*refs[i], prompt, prefix));
                });
            }
            std::exception_ptr first_error;
            try {
                resp[0] = provider.fetch_logits(make_request(*refs[0], prompt, prefix));
            } catch (...) {
                first_error = std::current_exception();
            }
            for (std::size_t i = 1; i < 4; ++i) {
                try {
                    resp[i] = pending[i - 1].get();
                } catch (...) {
                    if (!first_error) first_error = std::current_exception();
                }
            }
            if (first_error) std::rethrow_exception(first_error);
        } else {
            for (std::size_t i = 0; i < 4; ++i) {
                resp[i] = provider.fetch_logits(make_request(*refs[i], prompt, prefix));
            }
        }
        for (const auto& r : resp) {
            check_response(r);
            if (r.vocab_size != resp[0].vocab_size || r.eos_token_id != resp[0].eos_token_id) {
                throw Error(ErrorKind::session, "the four streams disagree on vocab_size or eos_token_id");
            }
        }
        FusedStep step = hdd_step(resp[0].logits, resp[1].logits, resp[2].logits, resp[3].logits, cfg);
        return ScoredStep{std::move(step.fused), step.diag, resp[0].eos_token_id};
    };
}

Scorer vanilla_scorer(const std::string& image_ref, const TokenSequence& prompt,
                      LogitProvider& provider) {
    return [&image_ref, &prompt, &provider](const TokenSequence& prefix) {
        LogitResponse r = provider.fetch_logits(make_request(image_ref, prompt, prefix));
        check_response(r);
        return ScoredStep{std::move(r.logits), StepDiagnostics{}, r.eos_token_id};
    };
}

// Greedy and multinomial share one loop: one sequence, one token per step.
void run_single(DecodeState& state, const HddConfig& cfg, const Scorer& scorer, std::uint64_t seed) {
    CounterRng rng(seed);
    for (int t = 0; t < cfg.max_new_tokens; ++t) {
        const auto step_start = Clock::now();
        ScoredStep step = scorer(state.generated);
        const std::vector<double> logp = log_softmax(step.scores, cfg.temperature);

        std::size_t token = 0;
        if (cfg.strategy == Strategy::multinomial) {
            token = sample_index(softmax(step.scores, cfg.temperature).values(), rng);
        } else {
            token = argmax(logp);
        }
        state.generated.push_back(static_cast<TokenId>(token));
        state.cumulative_log_prob += logp[token];
        state.step_diagnostics.push_back(step.diag);
        state.per_token_latency_ms.push_back(elapsed_ms(step_start));
        if (static_cast<TokenId>(token) == step.eos) {
            state.stopped_at_eos = true;
            return;
        }
    }
}

struct Hypothesis {
    TokenSequence tokens;
    double score = 0.0;
    std::vector<StepDiagnostics> diags;
    std::vector<double> latency_ms;
};

struct Candidate {
    std::size_t parent = 0;
    TokenId token = 0;
    double score = 0.0;
    double token_logp = 0.0;
};

// Beam search without length normalization. Scores are cumulative
// log-probabilities under the scored distribution; masked tokens are never
// candidates. Finished hypotheses are kept until `width` of them exist and
// no live hypothesis can still beat the worst one.
void run_beam(DecodeState& state, const HddConfig& cfg, const Scorer& scorer) {
    const auto width = static_cast<std::size_t>(cfg.beam_width);
    std::vector<Hypothesis> live(1);
    std::vector<Hypothesis> finished;
    TokenId eos = 0;

    // Ranking: score, then the step's own log-prob so that width 1 picks the
    // same token as greedy even when the cumulative sums round together.
    auto better = [](const Candidate& x, const Candidate& y) {
        if (x.score != y.score) return x.score > y.score;
        return x.token_logp > y.token_logp;
    };

    for (int t = 0; t < cfg.max_new_tokens && !live.empty(); ++t) {
        const auto step_start = Clock::now();
        std::vector<Candidate> candidates;
        std::vector<StepDiagnostics> diags(live.size());
        for (std::size_t h = 0; h < live.size(); ++h) {
            ScoredStep step = scorer(live[h].tokens);
            eos = step.eos;
            diags[h] = step.diag;
            const std::vector<double> logp = log_softmax(step.scores, cfg.temperature);
            for (std::size_t tok = 0; tok < logp.size(); ++tok) {
                if (std::isinf(logp[tok])) continue;
                candidates.push_back({h, static_cast<TokenId>(tok), live[h].score + logp[tok], logp[tok]});
            }
        }
        const double step_ms = elapsed_ms(step_start);
        std::stable_sort(candidates.begin(), candidates.end(), better);

        std::vector<Hypothesis> next;
        for (std::size_t rank = 0; rank < candidates.size() && next.size() < width; ++rank) {
            const Candidate& c = candidates[rank];
            Hypothesis h = live[c.parent];
            h.tokens.push_back(c.token);
            h.score = c.score;
            h.diags.push_back(diags[c.parent]);
            h.latency_ms.push_back(step_ms);
            if (c.token == eos) {
                if (rank < width) finished.push_back(std::move(h));
            } else {
                next.push_back(std::move(h));
            }
        }
        live = std::move(next);

        std::stable_sort(finished.begin(), finished.end(),
                         [](const Hypothesis& x, const Hypothesis& y) { return x.score > y.score; });
        if (finished.size() > width) finished.resize(width);
        if (finished.size() == width) {
            const double worst_finished = finished.back().score;
            const bool live_can_win = std::any_of(live.begin(), live.end(), [&](const Hypothesis& h) {
                return h.score > worst_finished;
            });
            if (!live_can_win) break;
        }
    }

    // Finished hypotheses win ties against ones cut off by max_new_tokens.
    const Hypothesis* best = nullptr;
    bool best_finished = false;
    for (const auto& h : finished) {
        if (!best || h.score > best->score) {
            best = &h;
            best_finished = true;
        }
    }
    for (const auto& h : live) {
        if (!best || h.score > best->score) {
            best = &h;
            best_finished = false;
        }
    }
    if (!best) throw Error(ErrorKind::degenerate_distribution, "beam search produced no hypothesis");

    state.generated = best->tokens;
    state.cumulative_log_prob = best->score;
    state.step_diagnostics = best->diags;
    state.per_token_latency_ms = best->latency_ms;
    state.stopped_at_eos = best_finished;
}

DecodeState run(DecodeState state, const HddConfig& cfg, const Scorer& scorer, const DecodeOptions& opts) {
    cfg.validate();
    if (state.prompt_tokens.empty()) {
        throw Error(ErrorKind::invalid_input, "decode requires a non-empty prompt");
    }
    const auto start = Clock::now();
    try {
        if (cfg.strategy == Strategy::beam) {
            run_beam(state, cfg, scorer);
        } else {
            run_single(state, cfg, scorer, opts.seed);
        }
    } catch (const Error& e) {
        state.total_ms = elapsed_ms(start);
        throw DecodeAborted(e.kind(), e.what(), std::move(state));
    } catch (const std::exception& e) {
        state.total_ms = elapsed_ms(start);
        throw DecodeAborted(ErrorKind::transport, e.what(), std::move(state));
    }
    state.total_ms = elapsed_ms(start);
    return state;
}

}  // namespace

std::uint64_t CounterRng::next() noexcept {
    // splitmix64 finalizer applied to seed + counter * golden gamma.
    std::uint64_t z = seed_ + (++counter_) * 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double CounterRng::uniform() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

std::size_t sample_index(std::span<const double> probs, CounterRng& rng) {
    if (probs.empty()) throw Error(ErrorKind::invalid_input, "sample_index over an empty distribution");
    const double u = rng.uniform();
    double cumulative = 0.0;
    std::size_t last_nonzero = probs.size();
    for (std::size_t i = 0; i < probs.size(); ++i) {
        if (probs[i] <= 0.0) continue;
        last_nonzero = i;
        cumulative += probs[i];
        if (u < cumulative) return i;
    }
    if (last_nonzero == probs.size()) {
        throw Error(ErrorKind::degenerate_distribution, "sample_index over an all-zero distribution");
    }
    // Rounding left the CDF just short of 1.
    return last_nonzero;
}

DecodeState decode(const ImageQuad& quad, const TokenSequence& prompt, const HddConfig& cfg,
                   LogitProvider& provider, const DecodeOptions& opts) {
    DecodeState state;
    state.prompt_tokens = prompt;
    state.quad = quad;
    return run(std::move(state), cfg, hdd_scorer(quad, prompt, cfg, provider, opts.concurrent_fetch), opts);
}

DecodeState decode_vanilla(const std::string& image_ref, const TokenSequence& prompt,
                           const HddConfig& cfg, LogitProvider& provider, const DecodeOptions& opts) {
    DecodeState state;
    state.prompt_tokens = prompt;
    state.quad = ImageQuad{image_ref, image_ref, image_ref, image_ref, false};
    return run(std::move(state), cfg, vanilla_scorer(image_ref, prompt, provider), opts);
}

}  // namespace hdd
