#include "hdd/provider.hpp"

#include <atomic>
#include <set>
#include <thread>

#include "hdd/error.hpp"
#include "hdd/trace.hpp"

namespace hdd {

std::uint64_t next_request_id() noexcept {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1, std::memory_order_relaxed);
}

void SessionConstants::observe(const LogitResponse& resp) {
    if (static_cast<std::int64_t>(resp.logits.size()) != resp.vocab_size) {
        throw Error(ErrorKind::session, "response carries " + std::to_string(resp.logits.size()) +
                                            " logits for vocab_size " + std::to_string(resp.vocab_size));
    }
    std::lock_guard lock(mutex_);
    if (!vocab_size_) {
        vocab_size_ = resp.vocab_size;
        eos_token_id_ = resp.eos_token_id;
        return;
    }
    if (*vocab_size_ != resp.vocab_size) {
        throw Error(ErrorKind::session, "vocab_size changed within a session (" +
                                            std::to_string(*vocab_size_) + " -> " +
                                            std::to_string(resp.vocab_size) + ")");
    }
    if (*eos_token_id_ != resp.eos_token_id) {
        throw Error(ErrorKind::session, "eos_token_id changed within a session");
    }
}

std::optional<std::int64_t> SessionConstants::vocab_size() const {
    std::lock_guard lock(mutex_);
    return vocab_size_;
}

std::optional<TokenId> SessionConstants::eos_token_id() const {
    std::lock_guard lock(mutex_);
    return eos_token_id_;
}

ReplayProvider::ReplayProvider(TraceFile trace) : trace_(std::move(trace)) {
    for (std::size_t i = 0; i < trace_.records.size(); ++i) {
        const auto& r = trace_.records[i];
        if (static_cast<std::int64_t>(r.logits.size()) != trace_.vocab_size) {
            throw Error(ErrorKind::session, "trace record does not match trace vocab_size");
        }
        if (!index_.emplace(r.key, i).second) {
            throw Error(ErrorKind::persistence, "trace contains a duplicate request key");
        }
    }
}

LogitResponse ReplayProvider::fetch_logits(const LogitRequest& req) {
    const auto key = request_key(req.image_ref, req.prompt_tokens, req.prefix_tokens);
    const auto it = index_.find(key);
    if (it == index_.end()) {
        throw Error(ErrorKind::not_found, "request for '" + req.image_ref + "' not present in trace");
    }
    const auto& r = trace_.records[it->second];
    if (r.image_ref != req.image_ref || r.prompt_tokens != req.prompt_tokens ||
        r.prefix_tokens != req.prefix_tokens) {
        throw Error(ErrorKind::not_found, "trace key collision for '" + req.image_ref + "'");
    }
    return {req.request_id, r.logits, trace_.eos_token_id, trace_.vocab_size};
}

std::string ReplayProvider::identity() const {
    return "replay(" + std::to_string(trace_.records.size()) + " records)";
}

RecordingProvider::RecordingProvider(LogitProvider& inner) : inner_(inner) {}

LogitResponse RecordingProvider::fetch_logits(const LogitRequest& req) {
    LogitResponse resp = inner_.fetch_logits(req);
    session_.observe(resp);

    const auto key = request_key(req.image_ref, req.prompt_tokens, req.prefix_tokens);
    std::lock_guard lock(mutex_);
    const auto [it, inserted] = index_.emplace(key, records_.size());
    if (inserted) {
        records_.push_back({key, req.image_ref, req.prompt_tokens, req.prefix_tokens, resp.logits});
    } else if (records_[it->second].logits != resp.logits) {
        throw Error(ErrorKind::session,
                    "provider returned different logits for a repeated request on '" + req.image_ref + "'");
    }
    return resp;
}

std::string RecordingProvider::identity() const { return "record(" + inner_.identity() + ")"; }

TraceFile RecordingProvider::trace(std::string metadata_json) const {
    TraceFile out;
    out.vocab_size = session_.vocab_size().value_or(0);
    out.eos_token_id = session_.eos_token_id().value_or(0);
    out.metadata_json = std::move(metadata_json);

    std::lock_guard lock(mutex_);
    out.records = records_;
    std::set<std::string> seen;
    for (const auto& r : records_) {
        if (seen.insert(r.image_ref).second) out.image_refs.push_back(r.image_ref);
    }
    return out;
}

LogitResponse DelayedProvider::fetch_logits(const LogitRequest& req) {
    std::this_thread::sleep_for(delay_);
    return inner_.fetch_logits(req);
}

std::string DelayedProvider::identity() const {
    return "delayed(" + std::to_string(delay_.count()) + "us, " + inner_.identity() + ")";
}

EchoProvider::EchoProvider(std::int64_t vocab_size) : vocab_size_(vocab_size) {
    if (vocab_size < 2) throw Error(ErrorKind::invalid_input, "echo vocabulary needs at least 2 tokens");
}

EchoProvider::EchoProvider(LogitVector fixed)
    : vocab_size_(static_cast<std::int64_t>(fixed.size())), fixed_(std::move(fixed)) {
    if (vocab_size_ < 2) throw Error(ErrorKind::invalid_input, "echo vocabulary needs at least 2 tokens");
}

LogitResponse EchoProvider::fetch_logits(const LogitRequest& req) {
    if (req.image_ref.rfind("error:", 0) == 0) {
        const std::string kind = req.image_ref.substr(6);
        for (ErrorKind k : {ErrorKind::invalid_input, ErrorKind::degenerate_distribution, ErrorKind::not_found,
                            ErrorKind::transport, ErrorKind::session, ErrorKind::persistence, ErrorKind::protocol}) {
            if (kind == to_string(k)) throw Error(k, "echo: requested failure");
        }
        throw Error(ErrorKind::invalid_input, "echo: unknown error kind '" + kind + "'");
    }
    LogitResponse resp;
    resp.request_id = req.request_id;
    resp.vocab_size = vocab_size_;
    resp.eos_token_id = eos_token_id();
    if (!fixed_.empty()) {
        resp.logits = fixed_;
        return resp;
    }
    std::uint64_t x = request_key(req.image_ref, req.prompt_tokens, req.prefix_tokens);
    resp.logits.resize(static_cast<std::size_t>(vocab_size_));
    for (auto& v : resp.logits) {
        x += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = x;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        z ^= z >> 31;
        v = 4.0 * static_cast<double>(z >> 11) * 0x1.0p-53 - 2.0;
    }
    return resp;
}

std::string EchoProvider::identity() const {
    return std::string(fixed_.empty() ? "echo" : "echo-fixed") + "(vocab=" + std::to_string(vocab_size_) + ")";
}

}  // namespace hdd
