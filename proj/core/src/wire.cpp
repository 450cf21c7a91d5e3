#include "hdd/wire.hpp"

#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstring>

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"

namespace hdd::wire {
namespace {

using json = nlohmann::json;

[[noreturn]] void protocol_error(const std::string& why) { throw Error(ErrorKind::protocol, why); }

}  // namespace

ErrorKind parse_error_kind(std::string_view name) noexcept {
    for (auto kind : {ErrorKind::invalid_input, ErrorKind::degenerate_distribution, ErrorKind::not_found,
                      ErrorKind::transport, ErrorKind::session, ErrorKind::persistence}) {
        if (name == to_string(kind)) return kind;
    }
    return ErrorKind::protocol;
}

std::string encode_request(const LogitRequest& req) {
    json j = {
        {"request_id", req.request_id},
        {"image_ref", req.image_ref},
        {"prompt_tokens", req.prompt_tokens},
        {"prefix_tokens", req.prefix_tokens},
    };
    return j.dump();
}

LogitRequest decode_request(std::string_view line) {
    LogitRequest req;
    try {
        const json j = json::parse(line);
        req.request_id = j.at("request_id").get<std::uint64_t>();
        req.image_ref = j.at("image_ref").get<std::string>();
        req.prompt_tokens = j.at("prompt_tokens").get<TokenSequence>();
        req.prefix_tokens = j.at("prefix_tokens").get<TokenSequence>();
    } catch (const json::exception& e) {
        protocol_error(std::string("malformed request: ") + e.what());
    }
    return req;
}

std::string encode_response(const LogitResponse& resp, bool with_session_constants) {
    for (double l : resp.logits) {
        if (!std::isfinite(l)) protocol_error("response logits must be finite");
    }
    json j = {{"request_id", resp.request_id}, {"logits", resp.logits}};
    if (with_session_constants) {
        j["vocab_size"] = resp.vocab_size;
        j["eos_token_id"] = resp.eos_token_id;
    }
    return j.dump();
}

std::string encode_error(std::optional<std::uint64_t> request_id, ErrorKind kind,
                         const std::string& message) {
    json j = {
        {"request_id", request_id ? json(*request_id) : json(nullptr)},
        {"error", {{"kind", to_string(kind)}, {"message", message}}},
    };
    return j.dump();
}

Reply decode_reply(std::string_view line) {
    Reply r;
    try {
        const json j = json::parse(line);
        if (j.contains("request_id") && !j.at("request_id").is_null()) {
            r.request_id = j.at("request_id").get<std::uint64_t>();
        }
        if (j.contains("error")) {
            const json& e = j.at("error");
            r.error = ErrorReply{parse_error_kind(e.value("kind", std::string{})),
                                 e.value("message", std::string{})};
            return r;
        }
        if (!r.request_id) protocol_error("response without request_id");
        for (const json& v : j.at("logits")) {
            if (!v.is_number()) protocol_error("non-numeric logit in response");
            r.logits.push_back(v.get<double>());
        }
        if (j.contains("vocab_size")) r.vocab_size = j.at("vocab_size").get<std::int64_t>();
        if (j.contains("eos_token_id")) r.eos_token_id = j.at("eos_token_id").get<TokenId>();
    } catch (const json::exception& e) {
        protocol_error(std::string("malformed response: ") + e.what());
    }
    return r;
}

}  // namespace hdd::wire

namespace hdd {
namespace {

// Buffered newline splitter over a file descriptor.
class LineReader {
public:
    explicit LineReader(int fd) : fd_(fd) {}

    bool next(std::string& line) {
        for (;;) {
            const auto pos = buffer_.find('\n');
            if (pos != std::string::npos) {
                line.assign(buffer_, 0, pos);
                buffer_.erase(0, pos + 1);
                return true;
            }
            char chunk[65536];
            const ssize_t n = ::read(fd_, chunk, sizeof chunk);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) {
                if (buffer_.empty()) return false;
                line.swap(buffer_);
                buffer_.clear();
                return true;
            }
            buffer_.append(chunk, static_cast<std::size_t>(n));
        }
    }

    // True when a complete line is buffered or the fd becomes readable
    // within timeout_ms.
    bool ready(int timeout_ms) const {
        if (buffer_.find('\n') != std::string::npos) return true;
        pollfd p{fd_, POLLIN, 0};
        int rc;
        do {
            rc = ::poll(&p, 1, timeout_ms);
        } while (rc < 0 && errno == EINTR);
        return rc != 0;
    }

private:
    int fd_;
    std::string buffer_;
};

bool write_all(int fd, const std::string& data) {
    std::size_t off = 0;
    while (off < data.size()) {
        const ssize_t n = ::write(fd, data.data() + off, data.size() - off);
        if (n < 0 && errno == EINTR) continue;
        if (n <= 0) return false;
        off += static_cast<std::size_t>(n);
    }
    return true;
}

[[noreturn]] void transport_error(const std::string& why) {
    throw Error(ErrorKind::transport, why + ": " + std::strerror(errno));
}

int connect_unix(const std::string& path) {
    sockaddr_un addr{};
    if (path.size() >= sizeof addr.sun_path) {
        throw Error(ErrorKind::invalid_input, "unix socket path too long");
    }
    addr.sun_family = AF_UNIX;
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    const int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (fd < 0) transport_error("socket");
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0) {
        ::close(fd);
        transport_error("connect to " + path);
    }
    return fd;
}

int connect_tcp(const std::string& host, const std::string& port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0 || res == nullptr) {
        throw Error(ErrorKind::transport, "cannot resolve " + host + ":" + port);
    }
    int fd = -1;
    for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw Error(ErrorKind::transport, "cannot connect to " + host + ":" + port);
    return fd;
}

}  // namespace

WireClient::WireClient(int read_fd, int write_fd, int child_pid, std::string identity,
                       WireClientOptions opts)
    : read_fd_(read_fd),
      write_fd_(write_fd),
      child_pid_(child_pid),
      identity_(std::move(identity)),
      opts_(opts) {
    reader_ = std::thread([this] { reader_loop(); });
}

std::unique_ptr<WireClient> WireClient::spawn(const std::string& command, WireClientOptions opts) {
    // A dead adapter must surface as a transport error, not kill the engine.
    std::signal(SIGPIPE, SIG_IGN);

    int to_child[2];
    int from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0) transport_error("pipe");
    if (::pipe2(from_child, O_CLOEXEC) != 0) {
        ::close(to_child[0]);
        ::close(to_child[1]);
        transport_error("pipe");
    }
    const pid_t pid = ::fork();
    if (pid < 0) transport_error("fork");
    if (pid == 0) {
        ::dup2(to_child[0], STDIN_FILENO);
        ::dup2(from_child[1], STDOUT_FILENO);
        ::execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    return std::unique_ptr<WireClient>(
        new WireClient(from_child[0], to_child[1], pid, "adapter(" + command + ")", opts));
}

std::unique_ptr<WireClient> WireClient::connect(const std::string& address, WireClientOptions opts) {
    std::signal(SIGPIPE, SIG_IGN);
    int fd = -1;
    if (address.rfind("unix:", 0) == 0) {
        fd = connect_unix(address.substr(5));
    } else if (address.rfind("tcp:", 0) == 0) {
        const std::string rest = address.substr(4);
        const auto colon = rest.rfind(':');
        if (colon == std::string::npos) {
            throw Error(ErrorKind::invalid_input, "tcp address must be tcp:host:port");
        }
        fd = connect_tcp(rest.substr(0, colon), rest.substr(colon + 1));
    } else {
        throw Error(ErrorKind::invalid_input, "unsupported adapter address '" + address + "'");
    }
    const int write_fd = ::dup(fd);
    if (write_fd < 0) {
        ::close(fd);
        transport_error("dup");
    }
    return std::unique_ptr<WireClient>(new WireClient(fd, write_fd, -1, "adapter(" + address + ")", opts));
}

std::unique_ptr<WireClient> WireClient::open(const std::string& target, WireClientOptions opts) {
    if (target.rfind("unix:", 0) == 0 || target.rfind("tcp:", 0) == 0) return connect(target, opts);
    return spawn(target, opts);
}

WireClient::~WireClient() {
    // Closing our write end signals EOF to the adapter.
    ::close(write_fd_);
    if (child_pid_ > 0) {
        int status = 0;
        bool exited = false;
        for (int i = 0; i < 200 && !exited; ++i) {
            exited = ::waitpid(child_pid_, &status, WNOHANG) == child_pid_;
            if (!exited) std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
        if (!exited) {
            ::kill(child_pid_, SIGKILL);
            ::waitpid(child_pid_, &status, 0);
        }
    } else {
        ::shutdown(read_fd_, SHUT_RDWR);
    }
    if (reader_.joinable()) reader_.join();
    ::close(read_fd_);
}

void WireClient::fail_all(const std::string& why) {
    std::lock_guard lock(mutex_);
    if (!broken_) broken_ = why;
    for (auto& [id, pending] : pending_) {
        if (!pending->done) {
            pending->done = true;
            pending->reply.error = wire::ErrorReply{ErrorKind::transport, why};
        }
    }
    cv_.notify_all();
}

// Called by the reader with mutex_ held, in arrival order. The first reply
// fixes the session constants; later replies may repeat but not change them.
void WireClient::check_session_constants(wire::Reply& reply) {
    if (reply.vocab_size.has_value() != reply.eos_token_id.has_value()) {
        reply.error = wire::ErrorReply{ErrorKind::protocol,
                                       "vocab_size and eos_token_id must be sent together"};
        return;
    }
    if (!vocab_size_) {
        if (!reply.vocab_size) {
            reply.error = wire::ErrorReply{ErrorKind::protocol,
                                           "first response did not carry vocab_size/eos_token_id"};
            return;
        }
        vocab_size_ = reply.vocab_size;
        eos_token_id_ = reply.eos_token_id;
        return;
    }
    if (reply.vocab_size && (*reply.vocab_size != *vocab_size_ || *reply.eos_token_id != *eos_token_id_)) {
        broken_ = "adapter changed session constants";
        broken_kind_ = ErrorKind::session;
        reply.error = wire::ErrorReply{ErrorKind::session, *broken_};
    }
}

void WireClient::reader_loop() {
    LineReader reader(read_fd_);
    std::string line;
    while (reader.next(line)) {
        if (line.empty()) continue;
        wire::Reply reply;
        try {
            reply = wire::decode_reply(line);
        } catch (const Error& e) {
            fail_all(e.what());
            return;
        }
        if (!reply.request_id) {
            // An error we cannot attribute to a request; nothing to wake.
            continue;
        }
        std::lock_guard lock(mutex_);
        if (!reply.error) check_session_constants(reply);
        const auto it = pending_.find(*reply.request_id);
        if (it == pending_.end()) continue;  // late reply for a timed-out request
        it->second->done = true;
        it->second->reply = std::move(reply);
        cv_.notify_all();
    }
    fail_all("adapter closed the connection");
}

LogitResponse WireClient::fetch_logits(const LogitRequest& req) {
    auto pending = std::make_shared<Pending>();
    {
        std::lock_guard lock(mutex_);
        if (broken_) throw Error(broken_kind_, *broken_);
        if (!pending_.emplace(req.request_id, pending).second) {
            throw Error(ErrorKind::invalid_input,
                        "request_id " + std::to_string(req.request_id) + " already in flight");
        }
    }
    bool written = false;
    {
        std::lock_guard lock(write_mutex_);
        written = write_all(write_fd_, wire::encode_request(req) + "\n");
    }

    std::unique_lock lock(mutex_);
    if (!written) {
        pending_.erase(req.request_id);
        throw Error(ErrorKind::transport, "failed to send request to adapter");
    }
    const bool ready = cv_.wait_for(lock, opts_.timeout, [&] { return pending->done; });
    pending_.erase(req.request_id);
    if (!ready) {
        throw Error(ErrorKind::transport,
                    "adapter timed out on request " + std::to_string(req.request_id));
    }

    wire::Reply& reply = pending->reply;
    if (reply.error) throw Error(reply.error->kind, "adapter: " + reply.error->message);

    if (static_cast<std::int64_t>(reply.logits.size()) != *vocab_size_) {
        broken_kind_ = ErrorKind::session;
        broken_ = "adapter returned " + std::to_string(reply.logits.size()) +
                  " logits for vocab_size " + std::to_string(*vocab_size_);
        throw Error(ErrorKind::session, *broken_);
    }
    return {req.request_id, std::move(reply.logits), *eos_token_id_, *vocab_size_};
}

void serve_wire(LogitProvider& backend, int in_fd, int out_fd, const ServeOptions& opts) {
    LineReader reader(in_fd);
    std::optional<std::string> held;

    auto emit = [&](const std::string& line) { return write_all(out_fd, line + "\n"); };
    auto answer = [&](const std::string& line) -> std::string {
        std::optional<std::uint64_t> id;
        try {
            const LogitRequest req = wire::decode_request(line);
            id = req.request_id;
            LogitResponse resp = backend.fetch_logits(req);
            resp.request_id = req.request_id;
            return wire::encode_response(resp, true);
        } catch (const Error& e) {
            return wire::encode_error(id, e.kind(), e.what());
        } catch (const std::exception& e) {
            return wire::encode_error(id, ErrorKind::protocol, e.what());
        }
    };

    std::string line;
    while (reader.next(line)) {
        if (line.empty()) continue;
        std::string out = answer(line);
        if (!opts.reverse_pairs) {
            if (!emit(out)) return;
            continue;
        }
        if (!held) {
            // A lone request is answered once no partner shows up.
            if (!reader.ready(20)) {
                if (!emit(out)) return;
                continue;
            }
            held = std::move(out);
            continue;
        }
        if (!emit(out) || !emit(*held)) return;
        held.reset();
    }
    if (held) emit(*held);
}

void serve_unix_once(LogitProvider& backend, const std::string& path, const ServeOptions& opts,
                     const std::function<void()>& on_listening) {
    sockaddr_un addr{};
    if (path.size() >= sizeof addr.sun_path) {
        throw Error(ErrorKind::invalid_input, "unix socket path too long");
    }
    addr.sun_family = AF_UNIX;
    std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
    ::unlink(path.c_str());

    const int listen_fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
    if (listen_fd < 0) transport_error("socket");
    if (::bind(listen_fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
        ::listen(listen_fd, 1) != 0) {
        ::close(listen_fd);
        transport_error("bind " + path);
    }
    if (on_listening) on_listening();
    const int conn = ::accept(listen_fd, nullptr, nullptr);
    ::close(listen_fd);
    ::unlink(path.c_str());
    if (conn < 0) transport_error("accept");
    serve_wire(backend, conn, conn, opts);
    ::close(conn);
}

}  // namespace hdd
