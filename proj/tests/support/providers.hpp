#pragma once

#include <atomic>
#include <functional>
#include <string>

#include "hdd/provider.hpp"

namespace testing_support {

// Provider defined by a function of (image_ref, prefix).
class FunctionProvider final : public hdd::LogitProvider {
public:
    using Fn = std::function<hdd::LogitVector(const std::string& image_ref, const hdd::TokenSequence& prefix)>;

    FunctionProvider(Fn fn, hdd::TokenId eos) : fn_(std::move(fn)), eos_(eos) {}

    hdd::LogitResponse fetch_logits(const hdd::LogitRequest& req) override {
        ++calls;
        hdd::LogitResponse r;
        r.request_id = req.request_id;
        r.logits = fn_(req.image_ref, req.prefix_tokens);
        r.vocab_size = static_cast<std::int64_t>(r.logits.size());
        r.eos_token_id = eos_;
        return r;
    }

    std::string identity() const override { return "function"; }

    std::atomic<int> calls{0};

private:
    Fn fn_;
    hdd::TokenId eos_;
};

inline hdd::ImageQuad quad(const std::string& stem = "img") {
    return {stem + "/full", stem + "/a", stem + "/b", "blank", true};
}

}  // namespace testing_support
