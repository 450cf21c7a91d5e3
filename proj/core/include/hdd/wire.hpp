#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>

#include "hdd/error.hpp"
#include "hdd/provider.hpp"

// Line-delimited JSON protocol between the engine and an external model
// adapter. One compact object per line, UTF-8, '\n' terminated.
//
//   request:  {"request_id":7,"image_ref":"...","prompt_tokens":[...],"prefix_tokens":[...]}
//   response: {"request_id":7,"logits":[...],"vocab_size":V,"eos_token_id":E}
//             (the two constants are required on the first reply, optional after)
//   error:    {"request_id":7,"error":{"kind":"not_found","message":"..."}}
namespace hdd::wire {

struct ErrorReply {
    ErrorKind kind = ErrorKind::protocol;
    std::string message;
};

struct Reply {
    std::optional<std::uint64_t> request_id;
    LogitVector logits;
    std::optional<std::int64_t> vocab_size;
    std::optional<TokenId> eos_token_id;
    std::optional<ErrorReply> error;
};

std::string encode_request(const LogitRequest& req);
LogitRequest decode_request(std::string_view line);

std::string encode_response(const LogitResponse& resp, bool with_session_constants);
std::string encode_error(std::optional<std::uint64_t> request_id, ErrorKind kind,
                         const std::string& message);
Reply decode_reply(std::string_view line);

ErrorKind parse_error_kind(std::string_view name) noexcept;

}  // namespace hdd::wire

namespace hdd {

struct WireClientOptions {
    std::chrono::milliseconds timeout{120'000};
};

// Provider backed by an adapter process or socket. Requests are multiplexed
// over one connection and matched to responses by request_id, so responses
// may arrive in any order.
class WireClient final : public LogitProvider {
public:
    // Runs `command` through /bin/sh and talks to its stdin/stdout.
    static std::unique_ptr<WireClient> spawn(const std::string& command, WireClientOptions opts = {});
    // "unix:/path/to/socket" or "tcp:host:port".
    static std::unique_ptr<WireClient> connect(const std::string& address, WireClientOptions opts = {});
    // Dispatches on the address prefix; anything else is treated as a command.
    static std::unique_ptr<WireClient> open(const std::string& target, WireClientOptions opts = {});

    ~WireClient() override;
    WireClient(const WireClient&) = delete;
    WireClient& operator=(const WireClient&) = delete;

    LogitResponse fetch_logits(const LogitRequest& req) override;
    std::string identity() const override { return identity_; }

private:
    struct Pending {
        bool done = false;
        wire::Reply reply;
    };

    WireClient(int read_fd, int write_fd, int child_pid, std::string identity, WireClientOptions opts);
    void reader_loop();
    void check_session_constants(wire::Reply& reply);
    void fail_all(const std::string& why);

    int read_fd_;
    int write_fd_;
    int child_pid_;
    std::string identity_;
    WireClientOptions opts_;

    std::mutex write_mutex_;
    std::mutex mutex_;
    std::condition_variable cv_;
    std::map<std::uint64_t, std::shared_ptr<Pending>> pending_;
    std::optional<std::string> broken_;
    ErrorKind broken_kind_ = ErrorKind::transport;
    std::optional<std::int64_t> vocab_size_;
    std::optional<TokenId> eos_token_id_;
    std::thread reader_;
};

struct ServeOptions {
    // Answer back-to-back requests in swapped pairs. Exercises request_id
    // matching in clients.
    bool reverse_pairs = false;
};

// Answers protocol requests read from in_fd using `backend`, until EOF.
// Failures become error replies; the loop never goes silent on bad input.
void serve_wire(LogitProvider& backend, int in_fd, int out_fd, const ServeOptions& opts = {});

// Binds a unix socket at `path`, serves exactly one connection, then returns.
// `on_listening` runs once the socket accepts connections.
void serve_unix_once(LogitProvider& backend, const std::string& path, const ServeOptions& opts = {},
                     const std::function<void()>& on_listening = {});

}  // namespace hdd
