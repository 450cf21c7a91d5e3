#pragma once

#include <stdexcept>
#include <string>

namespace hdd {

enum class ErrorKind {
    invalid_input,
    degenerate_distribution,
    not_found,
    transport,
    session,
    persistence,
    protocol,
};

const char* to_string(ErrorKind kind) noexcept;

// Base exception for everything the engine throws. The kind lets callers
// distinguish recoverable lookups (not_found) from broken sessions.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace hdd
