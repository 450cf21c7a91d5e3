#include "hdd/error.hpp"

namespace hdd {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::invalid_input: return "invalid_input";
        case ErrorKind::degenerate_distribution: return "degenerate_distribution";
        case ErrorKind::not_found: return "not_found";
        case ErrorKind::transport: return "transport";
        case ErrorKind::session: return "session";
        case ErrorKind::persistence: return "persistence";
        case ErrorKind::protocol: return "protocol";
    }
    return "unknown";
}

}  // namespace hdd
