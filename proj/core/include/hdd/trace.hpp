#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "hdd/types.hpp"

namespace hdd {

inline constexpr int kTraceFormatVersion = 1;

// 64-bit FNV-1a over (image_ref, prompt, prefix). The trace lookup key.
std::uint64_t request_key(const std::string& image_ref, const TokenSequence& prompt,
                          const TokenSequence& prefix) noexcept;

struct TraceRecord {
    std::uint64_t key = 0;
    std::string image_ref;
    TokenSequence prompt_tokens;
    TokenSequence prefix_tokens;
    LogitVector logits;
};

// A recorded provider session. On disk this is JSON Lines: one header
// object followed by one object per record (see docs/protocol.md).
struct TraceFile {
    int version = kTraceFormatVersion;
    std::int64_t vocab_size = 0;
    TokenId eos_token_id = 0;
    std::vector<std::string> image_refs;
    // Free-form JSON object, e.g. the run configuration that produced it.
    std::string metadata_json = "{}";
    std::vector<TraceRecord> records;
};

void write_trace(const TraceFile& trace, std::ostream& out);
void save_trace(const TraceFile& trace, const std::filesystem::path& path);

// Rejects unknown versions, records whose logits length differs from the
// header vocab_size, key/content mismatches, and duplicate keys.
TraceFile read_trace(std::istream& in);
TraceFile load_trace(const std::filesystem::path& path);

}  // namespace hdd
