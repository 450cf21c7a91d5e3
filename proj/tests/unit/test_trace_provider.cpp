#include <chrono>
#include <sstream>

#include "doctest.h"
#include "hdd/decode.hpp"
#include "hdd/error.hpp"
#include "hdd/provider.hpp"
#include "hdd/synth.hpp"
#include "hdd/trace.hpp"
#include "../support/providers.hpp"

using namespace hdd;
using testing_support::FunctionProvider;

namespace {

ErrorKind kind_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    FAIL("expected an Error");
    return ErrorKind::protocol;
}

std::string trace_text(const TraceFile& t) {
    std::ostringstream os;
    write_trace(t, os);
    return os.str();
}

TraceFile parse_trace(const std::string& text) {
    std::istringstream in(text);
    return read_trace(in);
}

TraceFile small_trace() {
    TraceFile t;
    t.vocab_size = 3;
    t.eos_token_id = 2;
    t.image_refs = {"a"};
    t.metadata_json = R"({"note":"x"})";
    t.records.push_back({request_key("a", {1}, {}), "a", {1}, {}, {0.5, -1.25, 3.0}});
    t.records.push_back({request_key("a", {1}, {0}), "a", {1}, {0}, {0.1, 0.2, 0.3}});
    return t;
}

}  // namespace

TEST_CASE("request keys depend on every field") {
    const auto k = request_key("img", {1, 2}, {3});
    CHECK(k == request_key("img", {1, 2}, {3}));
    CHECK(k != request_key("img2", {1, 2}, {3}));
    CHECK(k != request_key("img", {1, 2, 3}, {}));
    CHECK(k != request_key("img", {1}, {2, 3}));
    CHECK(k != request_key("img", {2, 1}, {3}));
}

TEST_CASE("trace round trip is exact") {
    const TraceFile t = small_trace();
    const TraceFile back = parse_trace(trace_text(t));
    CHECK(back.vocab_size == 3);
    CHECK(back.eos_token_id == 2);
    CHECK(back.image_refs == t.image_refs);
    CHECK(back.records.size() == 2);
    CHECK(back.records[0].logits == t.records[0].logits);
    CHECK(back.records[1].prefix_tokens == TokenSequence{0});
    CHECK(trace_text(back) == trace_text(t));
}

TEST_CASE("logits survive the text format bit for bit") {
    TraceFile t;
    t.vocab_size = 4;
    const LogitVector awkward{0.1 + 0.2, 1e-300, -123456.789012345678, 5e-324};
    t.records.push_back({request_key("r", {0}, {}), "r", {0}, {}, awkward});
    CHECK(parse_trace(trace_text(t)).records[0].logits == awkward);
}

TEST_CASE("empty session gives a valid empty trace") {
    FunctionProvider inner([](const std::string&, const TokenSequence&) { return LogitVector{0, 1}; }, 1);
    RecordingProvider rec(inner);
    const TraceFile t = rec.trace();
    CHECK(t.records.empty());
    const TraceFile back = parse_trace(trace_text(t));
    CHECK(back.records.empty());
    CHECK(back.vocab_size == 0);
}

TEST_CASE("malformed traces are rejected") {
    const std::string good = trace_text(small_trace());
    CHECK_NOTHROW(parse_trace(good));

    auto edit = [&](const std::string& from, const std::string& to) {
        std::string s = good;
        const auto pos = s.find(from);
        REQUIRE(pos != std::string::npos);
        s.replace(pos, from.size(), to);
        return s;
    };
    CHECK(kind_of([&] { parse_trace(edit("\"vocab_size\":3", "\"vocab_size\":4")); }) == ErrorKind::persistence);
    CHECK(kind_of([&] { parse_trace(edit("\"version\":1", "\"version\":2")); }) == ErrorKind::persistence);
    CHECK(kind_of([&] { parse_trace(edit("hdd-trace", "other")); }) == ErrorKind::persistence);
    CHECK(kind_of([&] { parse_trace(edit("\"record_count\":2", "\"record_count\":3")); }) == ErrorKind::persistence);
    CHECK(kind_of([&] { parse_trace(edit("\"prefix_tokens\":[]", "\"prefix_tokens\":[5]")); }) ==
          ErrorKind::persistence);
    CHECK(kind_of([&] { parse_trace(good.substr(0, good.size() / 2)); }) == ErrorKind::persistence);
    CHECK(kind_of([&] { parse_trace(""); }) == ErrorKind::persistence);

    TraceFile dup = small_trace();
    dup.records.push_back(dup.records[0]);
    CHECK(kind_of([&] { parse_trace(trace_text(dup)); }) == ErrorKind::persistence);
}

TEST_CASE("replay returns recorded vectors and rejects unknown requests") {
    ReplayProvider replay(small_trace());
    const auto r = replay.fetch_logits({77, "a", {1}, {}});
    CHECK(r.request_id == 77);
    CHECK(r.logits == LogitVector{0.5, -1.25, 3.0});
    CHECK(r.vocab_size == 3);
    CHECK(r.eos_token_id == 2);
    CHECK(kind_of([&] { replay.fetch_logits({1, "a", {2}, {}}); }) == ErrorKind::not_found);
}

TEST_CASE("recording deduplicates and detects nondeterministic backends") {
    int calls = 0;
    FunctionProvider flaky([&](const std::string&, const TokenSequence&) {
        ++calls;
        return calls < 3 ? LogitVector{0, 1} : LogitVector{1, 0};
    }, 1);
    RecordingProvider rec(flaky);
    rec.fetch_logits({1, "x", {0}, {}});
    rec.fetch_logits({2, "x", {0}, {}});
    CHECK(rec.trace().records.size() == 1);
    CHECK(kind_of([&] { rec.fetch_logits({3, "x", {0}, {}}); }) == ErrorKind::session);
}

TEST_CASE("session constants are fixed by the first response") {
    SessionConstants s;
    s.observe({1, {0, 0, 0}, 2, 3});
    CHECK(s.vocab_size() == 3);
    CHECK(kind_of([&] { s.observe({2, {0, 0, 0, 0}, 2, 4}); }) == ErrorKind::session);
    CHECK(kind_of([&] { s.observe({3, {0, 0, 0}, 1, 3}); }) == ErrorKind::session);
    CHECK(kind_of([&] { s.observe({4, {0, 0}, 2, 3}); }) == ErrorKind::session);
}

TEST_CASE("a recorded decode replays to the identical state") {
    const synth::Simulator sim;
    synth::SyntheticProvider live(sim, synth::Task::caption);
    RecordingProvider rec(live);
    const auto items = synth::make_caption_suite(sim, 3, 5);
    HddConfig cfg;
    cfg.max_new_tokens = 5;
    for (Strategy s : {Strategy::greedy, Strategy::beam, Strategy::multinomial}) {
        cfg.strategy = s;
        for (const auto& item : items) {
            DecodeOptions o;
            o.seed = 3;
            const auto a = decode(item.quad, item.prompt, cfg, rec, o);
            ReplayProvider replay(parse_trace(trace_text(rec.trace())));
            const auto b = decode(item.quad, item.prompt, cfg, replay, o);
            CHECK(a.generated == b.generated);
            CHECK(a.step_diagnostics == b.step_diagnostics);
            CHECK(a.cumulative_log_prob == b.cumulative_log_prob);
        }
    }
}

TEST_CASE("delayed provider waits before answering") {
    FunctionProvider inner([](const std::string&, const TokenSequence&) { return LogitVector{0, 1}; }, 1);
    DelayedProvider slow(inner, std::chrono::milliseconds(5));
    const auto t0 = std::chrono::steady_clock::now();
    slow.fetch_logits({1, "x", {0}, {}});
    CHECK(std::chrono::steady_clock::now() - t0 >= std::chrono::milliseconds(5));
}

TEST_CASE("echo provider") {
    EchoProvider echo(8);
    const auto a = echo.fetch_logits({1, "img", {1}, {}});
    CHECK(a.logits.size() == 8);
    CHECK(a.eos_token_id == 7);
    CHECK(echo.fetch_logits({2, "img", {1}, {}}).logits == a.logits);
    CHECK(echo.fetch_logits({3, "img", {1}, {0}}).logits != a.logits);
    CHECK(kind_of([&] { echo.fetch_logits({4, "error:not_found", {1}, {}}); }) == ErrorKind::not_found);

    EchoProvider fixed(LogitVector{1.0, 2.0, 3.0});
    CHECK(fixed.fetch_logits({5, "anything", {0}, {4}}).logits == LogitVector{1.0, 2.0, 3.0});
}
