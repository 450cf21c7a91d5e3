#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "hdd/trace.hpp"
#include "hdd/types.hpp"

namespace hdd {

// Conditioning tuple (image, prompt, generated prefix) for one next-token
// query.
struct LogitRequest {
    std::uint64_t request_id = 0;
    std::string image_ref;
    TokenSequence prompt_tokens;
    TokenSequence prefix_tokens;
};

struct LogitResponse {
    std::uint64_t request_id = 0;
    LogitVector logits;
    TokenId eos_token_id = 0;
    std::int64_t vocab_size = 0;
};

// Process-wide monotonically increasing request ids.
std::uint64_t next_request_id() noexcept;

// Anything that maps (image, prompt, prefix) to next-token logits.
// Implementations must tolerate concurrent fetch_logits calls.
class LogitProvider {
public:
    virtual ~LogitProvider() = default;

    virtual LogitResponse fetch_logits(const LogitRequest& req) = 0;

    // Short human-readable description recorded in run snapshots.
    virtual std::string identity() const = 0;
};

// vocab_size and eos_token_id are fixed by the first response of a session.
class SessionConstants {
public:
    // Throws Error(session) when a response disagrees with the session or
    // its logits length differs from vocab_size.
    void observe(const LogitResponse& resp);

    std::optional<std::int64_t> vocab_size() const;
    std::optional<TokenId> eos_token_id() const;

private:
    mutable std::mutex mutex_;
    std::optional<std::int64_t> vocab_size_;
    std::optional<TokenId> eos_token_id_;
};

// Serves responses from a loaded trace. Immutable after construction.
class ReplayProvider final : public LogitProvider {
public:
    explicit ReplayProvider(TraceFile trace);

    LogitResponse fetch_logits(const LogitRequest& req) override;
    std::string identity() const override;

    const TraceFile& trace() const noexcept { return trace_; }

private:
    TraceFile trace_;
    std::map<std::uint64_t, std::size_t> index_;
};

// Forwards to an inner provider and keeps every distinct (request, response)
// pair so the session can be written out as a trace.
class RecordingProvider final : public LogitProvider {
public:
    explicit RecordingProvider(LogitProvider& inner);

    LogitResponse fetch_logits(const LogitRequest& req) override;
    std::string identity() const override;

    // Snapshot of everything recorded so far, ordered by first arrival.
    TraceFile trace(std::string metadata_json = "{}") const;

private:
    LogitProvider& inner_;
    SessionConstants session_;
    mutable std::mutex mutex_;
    std::vector<TraceRecord> records_;
    std::map<std::uint64_t, std::size_t> index_;
};

// Adds a fixed sleep before every fetch. Used to model a backend whose
// forward pass dominates step latency.
class DelayedProvider final : public LogitProvider {
public:
    DelayedProvider(LogitProvider& inner, std::chrono::microseconds delay)
        : inner_(inner), delay_(delay) {}

    LogitResponse fetch_logits(const LogitRequest& req) override;
    std::string identity() const override;

private:
    LogitProvider& inner_;
    std::chrono::microseconds delay_;
};

// Deterministic stand-in backend. By default logits are a pure function of
// the request content; with `fixed` every request gets that vector. An
// image_ref of the form "error:<kind>" fails with that error kind. EOS is the
// last token.
class EchoProvider final : public LogitProvider {
public:
    explicit EchoProvider(std::int64_t vocab_size = 16);
    explicit EchoProvider(LogitVector fixed);

    LogitResponse fetch_logits(const LogitRequest& req) override;
    std::string identity() const override;

    TokenId eos_token_id() const noexcept { return static_cast<TokenId>(vocab_size_ - 1); }

private:
    std::int64_t vocab_size_;
    LogitVector fixed_;
};

}  // namespace hdd
