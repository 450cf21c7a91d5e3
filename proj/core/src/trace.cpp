#include "hdd/trace.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "hdd/error.hpp"
#include "json.hpp"

namespace hdd {
namespace {

using json = nlohmann::json;

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void mix_byte(std::uint64_t& h, unsigned char b) noexcept {
    h ^= b;
    h *= kFnvPrime;
}

void mix_tokens(std::uint64_t& h, const TokenSequence& tokens) noexcept {
    mix_byte(h, 0xfe);
    for (TokenId t : tokens) {
        const auto u = static_cast<std::uint32_t>(t);
        for (int shift = 0; shift < 32; shift += 8) mix_byte(h, static_cast<unsigned char>(u >> shift));
    }
}

std::string to_hex(std::uint64_t v) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << v;
    return os.str();
}

std::uint64_t from_hex(const std::string& s) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(s, &used, 16);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty()) {
        throw Error(ErrorKind::persistence, "trace: malformed key '" + s + "'");
    }
    return v;
}

[[noreturn]] void reject(const std::string& why) { throw Error(ErrorKind::persistence, "trace: " + why); }

}  // namespace

std::uint64_t request_key(const std::string& image_ref, const TokenSequence& prompt,
                          const TokenSequence& prefix) noexcept {
    std::uint64_t h = kFnvOffset;
    for (char c : image_ref) mix_byte(h, static_cast<unsigned char>(c));
    mix_tokens(h, prompt);
    mix_tokens(h, prefix);
    return h;
}

void write_trace(const TraceFile& trace, std::ostream& out) {
    json header = {
        {"format", "hdd-trace"},
        {"version", trace.version},
        {"vocab_size", trace.vocab_size},
        {"eos_token_id", trace.eos_token_id},
        {"image_refs", trace.image_refs},
        {"record_count", trace.records.size()},
        {"metadata", json::parse(trace.metadata_json)},
    };
    out << header.dump() << '\n';
    for (const auto& r : trace.records) {
        for (double l : r.logits) {
            if (!std::isfinite(l)) reject("cannot persist non-finite logits");
        }
        json rec = {
            {"key", to_hex(r.key)},
            {"image_ref", r.image_ref},
            {"prompt_tokens", r.prompt_tokens},
            {"prefix_tokens", r.prefix_tokens},
            {"logits", r.logits},
        };
        out << rec.dump() << '\n';
    }
    if (!out) reject("write failed");
}

void save_trace(const TraceFile& trace, const std::filesystem::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
        if (ec) reject("cannot create '" + path.parent_path().string() + "': " + ec.message());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) reject("cannot open '" + path.string() + "' for writing");
    write_trace(trace, out);
    out.flush();
    if (!out) reject("write to '" + path.string() + "' failed");
}

TraceFile read_trace(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) reject("missing header line");

    TraceFile trace;
    std::size_t expected_records = 0;
    try {
        const json header = json::parse(line);
        if (header.value("format", std::string{}) != "hdd-trace") reject("not an hdd-trace file");
        trace.version = header.at("version").get<int>();
        if (trace.version != kTraceFormatVersion) {
            reject("unsupported version " + std::to_string(trace.version));
        }
        trace.vocab_size = header.at("vocab_size").get<std::int64_t>();
        trace.eos_token_id = header.at("eos_token_id").get<TokenId>();
        trace.image_refs = header.at("image_refs").get<std::vector<std::string>>();
        expected_records = header.at("record_count").get<std::size_t>();
        trace.metadata_json = header.value("metadata", json::object()).dump();
    } catch (const json::exception& e) {
        reject(std::string("malformed header: ") + e.what());
    }
    if (trace.vocab_size < 0 || (trace.vocab_size == 0 && expected_records > 0)) {
        reject("vocab_size must be positive");
    }

    std::set<std::uint64_t> seen;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        TraceRecord r;
        try {
            const json rec = json::parse(line);
            r.key = from_hex(rec.at("key").get<std::string>());
            r.image_ref = rec.at("image_ref").get<std::string>();
            r.prompt_tokens = rec.at("prompt_tokens").get<TokenSequence>();
            r.prefix_tokens = rec.at("prefix_tokens").get<TokenSequence>();
            r.logits = rec.at("logits").get<LogitVector>();
        } catch (const json::exception& e) {
            reject(std::string("malformed record: ") + e.what());
        }
        if (static_cast<std::int64_t>(r.logits.size()) != trace.vocab_size) {
            reject("record logits length " + std::to_string(r.logits.size()) +
                   " does not match header vocab_size " + std::to_string(trace.vocab_size));
        }
        if (request_key(r.image_ref, r.prompt_tokens, r.prefix_tokens) != r.key) {
            reject("record key does not match its content");
        }
        if (!seen.insert(r.key).second) reject("duplicate record key " + to_hex(r.key));
        trace.records.push_back(std::move(r));
    }
    if (trace.records.size() != expected_records) {
        reject("header declares " + std::to_string(expected_records) + " records, found " +
               std::to_string(trace.records.size()));
    }
    return trace;
}

TraceFile load_trace(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) reject("cannot open '" + path.string() + "'");
    return read_trace(in);
}

}  // namespace hdd
