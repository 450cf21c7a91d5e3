#include <unistd.h>

#include <atomic>
#include <cmath>
#include <chrono>
#include <filesystem>
#include <future>
#include <thread>
#include <vector>

#include "doctest.h"
#include "hdd/decode.hpp"
#include "hdd/error.hpp"
#include "hdd/wire.hpp"
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

std::string socket_path(const char* tag) {
    return (std::filesystem::temp_directory_path() /
            ("hdd-test-" + std::to_string(::getpid()) + "-" + tag + ".sock"))
        .string();
}

// Serves `backend` on a fresh unix socket in the background; the returned
// client is connected to it.
struct UnixLoop {
    std::string path;
    std::thread server;
    std::unique_ptr<WireClient> client;

    UnixLoop(LogitProvider& backend, const char* tag, ServeOptions opts = {},
             std::chrono::milliseconds timeout = std::chrono::milliseconds(10'000))
        : path(socket_path(tag)) {
        std::promise<void> listening;
        auto ready = listening.get_future();
        server = std::thread([&backend, opts, this, p = std::move(listening)]() mutable {
            serve_unix_once(backend, path, opts, [&] { p.set_value(); });
        });
        ready.wait();
        client = WireClient::connect("unix:" + path, {timeout});
    }

    ~UnixLoop() {
        client.reset();
        server.join();
    }
};

}  // namespace

TEST_CASE("request and reply encoding round trip") {
    const LogitRequest req{42, "syn/1/2/full", {0, 3, 5}, {1}};
    const LogitRequest back = wire::decode_request(wire::encode_request(req));
    CHECK(back.request_id == 42);
    CHECK(back.image_ref == req.image_ref);
    CHECK(back.prompt_tokens == req.prompt_tokens);
    CHECK(back.prefix_tokens == req.prefix_tokens);

    const auto with = wire::decode_reply(wire::encode_response({9, {0.5, -1.0}, 1, 2}, true));
    CHECK(with.request_id == 9u);
    CHECK(with.logits == LogitVector{0.5, -1.0});
    CHECK(with.vocab_size == 2);
    CHECK(with.eos_token_id == 1);
    const auto without = wire::decode_reply(wire::encode_response({9, {0.5, -1.0}, 1, 2}, false));
    CHECK_FALSE(without.vocab_size.has_value());

    const auto err = wire::decode_reply(wire::encode_error(std::nullopt, ErrorKind::not_found, "gone"));
    CHECK_FALSE(err.request_id.has_value());
    REQUIRE(err.error.has_value());
    CHECK(err.error->kind == ErrorKind::not_found);
    CHECK(err.error->message == "gone");
}

TEST_CASE("malformed wire messages are protocol errors") {
    CHECK(kind_of([] { wire::decode_request("{}"); }) == ErrorKind::protocol);
    CHECK(kind_of([] { wire::decode_request("not json"); }) == ErrorKind::protocol);
    CHECK(kind_of([] { wire::decode_reply(R"({"logits":[1]})"); }) == ErrorKind::protocol);
    CHECK(kind_of([] { wire::decode_reply(R"({"request_id":1,"logits":["a"]})"); }) == ErrorKind::protocol);
    CHECK(kind_of([] { wire::encode_response({1, {std::nan("")}, 0, 1}, true); }) == ErrorKind::protocol);
    CHECK(wire::parse_error_kind("session") == ErrorKind::session);
    CHECK(wire::parse_error_kind("nonsense") == ErrorKind::protocol);
}

TEST_CASE("server answers garbage with an error line") {
    int to_server[2], from_server[2];
    REQUIRE(::pipe(to_server) == 0);
    REQUIRE(::pipe(from_server) == 0);
    EchoProvider echo(4);
    std::thread server([&] {
        serve_wire(echo, to_server[0], from_server[1]);
        ::close(from_server[1]);
    });
    const std::string input = "garbage\n" + wire::encode_request({5, "x", {0}, {}}) + "\n";
    REQUIRE(::write(to_server[1], input.data(), input.size()) == static_cast<ssize_t>(input.size()));
    ::close(to_server[1]);
    std::string out;
    char buf[4096];
    ssize_t n;
    while ((n = ::read(from_server[0], buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
    server.join();
    ::close(to_server[0]);
    ::close(from_server[0]);

    const auto nl = out.find('\n');
    REQUIRE(nl != std::string::npos);
    const auto first = wire::decode_reply(out.substr(0, nl));
    REQUIRE(first.error.has_value());
    CHECK(first.error->kind == ErrorKind::protocol);
    CHECK_FALSE(first.request_id.has_value());
    const auto second = wire::decode_reply(out.substr(nl + 1, out.find('\n', nl + 1) - nl - 1));
    CHECK(second.request_id == 5u);
    CHECK(second.logits.size() == 4);
}

TEST_CASE("loopback echo adapter returns the fixed vector") {
    EchoProvider fixed(LogitVector{0.25, -3.0, 1.5});
    UnixLoop loop(fixed, "fixed");
    const auto r = loop.client->fetch_logits({1234, "img", {0, 1}, {}});
    CHECK(r.request_id == 1234);
    CHECK(r.logits == LogitVector{0.25, -3.0, 1.5});
    CHECK(r.vocab_size == 3);
    CHECK(r.eos_token_id == 2);
}

TEST_CASE("out-of-order replies reach the right caller") {
    EchoProvider echo(16);
    ServeOptions opts;
    opts.reverse_pairs = true;
    UnixLoop loop(echo, "reverse", opts);
    std::vector<std::future<bool>> results;
    for (int t = 0; t < 8; ++t) {
        results.push_back(std::async(std::launch::async, [&, t] {
            EchoProvider local(16);
            bool ok = true;
            for (int i = 0; i < 40; ++i) {
                const LogitRequest req{next_request_id(), "img" + std::to_string(t), {t}, {i}};
                ok = ok && loop.client->fetch_logits(req).logits == local.fetch_logits(req).logits;
            }
            return ok;
        }));
    }
    for (auto& f : results) CHECK(f.get());
}

TEST_CASE("error replies fail one request and leave the session usable") {
    EchoProvider echo(6);
    UnixLoop loop(echo, "errors");
    CHECK(loop.client->fetch_logits({1, "fine", {0}, {}}).logits.size() == 6);
    CHECK(kind_of([&] { loop.client->fetch_logits({2, "error:not_found", {0}, {}}); }) == ErrorKind::not_found);
    CHECK(kind_of([&] { loop.client->fetch_logits({3, "error:invalid_input", {0}, {}}); }) ==
          ErrorKind::invalid_input);
    CHECK(loop.client->fetch_logits({4, "fine", {0}, {}}).logits.size() == 6);
}

TEST_CASE("an adapter that changes session constants breaks the session") {
    std::atomic<int> calls{0};
    FunctionProvider shifty([&](const std::string&, const TokenSequence&) {
        return ++calls <= 2 ? LogitVector{0, 1, 2} : LogitVector{0, 1, 2, 3};
    }, 2);
    UnixLoop loop(shifty, "shifty");
    loop.client->fetch_logits({1, "x", {0}, {}});
    loop.client->fetch_logits({2, "x", {0}, {}});
    CHECK(kind_of([&] { loop.client->fetch_logits({3, "x", {0}, {}}); }) == ErrorKind::session);
    CHECK(kind_of([&] { loop.client->fetch_logits({4, "x", {0}, {}}); }) == ErrorKind::session);
}

TEST_CASE("decoding through the wire matches decoding in process") {
    EchoProvider echo(12);
    UnixLoop loop(echo, "decode");
    HddConfig cfg;
    cfg.max_new_tokens = 8;
    for (Strategy s : {Strategy::greedy, Strategy::beam}) {
        cfg.strategy = s;
        const auto quad = testing_support::quad("pic");
        const auto remote = decode(quad, {1, 2}, cfg, *loop.client);
        const auto local = decode(quad, {1, 2}, cfg, echo);
        CHECK(remote.generated == local.generated);
        CHECK(remote.step_diagnostics == local.step_diagnostics);
    }
}

#ifdef HDD_CLI_PATH
TEST_CASE("spawned adapter process") {
    auto client = WireClient::spawn(std::string(HDD_CLI_PATH) + " serve --backend echo --echo-vocab 5");
    const auto r = client->fetch_logits({7, "img", {0}, {}});
    CHECK(r.logits == EchoProvider(5).fetch_logits({7, "img", {0}, {}}).logits);
    CHECK(client->identity().find("serve") != std::string::npos);
}
#endif

TEST_CASE("an adapter that exits fails requests instead of hanging") {
    auto client = WireClient::spawn("exit 0");
    CHECK(kind_of([&] { client->fetch_logits({1, "x", {0}, {}}); }) == ErrorKind::transport);
}

TEST_CASE("a silent adapter times out") {
    auto client = WireClient::spawn("cat > /dev/null", {std::chrono::milliseconds(200)});
    const auto t0 = std::chrono::steady_clock::now();
    CHECK(kind_of([&] { client->fetch_logits({1, "x", {0}, {}}); }) == ErrorKind::transport);
    CHECK(std::chrono::steady_clock::now() - t0 < std::chrono::seconds(5));
}

TEST_CASE("bad addresses are rejected") {
    CHECK_THROWS_AS(WireClient::connect("tcp:nohost"), Error);
    CHECK_THROWS_AS(WireClient::connect("ftp:x"), Error);
    CHECK_THROWS_AS(WireClient::connect("unix:/nonexistent/dir/sock"), Error);
}
