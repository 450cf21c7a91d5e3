#pragma once

#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hdd/decode.hpp"

namespace hdd::metrics {

struct BinaryOutcome {
    bool predicted = false;
    bool actual = false;
};

struct PopeMetrics {
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double yes_ratio = 0.0;
    // Set when precision, recall or F1 had a zero denominator and was
    // reported as 0.
    bool f1_undefined = false;
};

// Confusion-matrix metrics over binary answers. Throws on an empty list.
PopeMetrics pope_metrics(std::span<const BinaryOutcome> outcomes);

struct CaptionSentence {
    std::string text;
    std::set<std::string> mentioned;
};

struct CaptionRecord {
    std::set<std::string> generated_objects;
    std::set<std::string> ground_truth_objects;
    std::vector<CaptionSentence> sentences;
    std::size_t length_tokens = 0;
};

struct ChairRecordMetrics {
    double chair_i = 0.0;
    double chair_s = 0.0;
    double recall = 0.0;
};

struct ChairMetrics {
    // Pooled over all records.
    double chair_i = 0.0;
    double chair_s = 0.0;
    double avg_length = 0.0;
    double recall = 0.0;
    // Per-record values and their unweighted means, for diagnostics.
    std::vector<ChairRecordMetrics> per_record;
    double macro_chair_i = 0.0;
    double macro_chair_s = 0.0;
    double macro_recall = 0.0;
};

// CHAIR_i, CHAIR_s and object recall. Throws on an empty list, on a record
// with no ground-truth objects, or on a sentence mentioning an object missing
// from generated_objects.
ChairMetrics chair_metrics(std::span<const CaptionRecord> records);

struct LatencyStats {
    std::size_t tokens = 0;
    double ms_per_token_mean = 0.0;
    double p50 = 0.0;
    double p95 = 0.0;
};

// Aggregates per-token latencies across decode states. Percentiles use
// linear interpolation between order statistics.
LatencyStats latency_stats(std::span<const DecodeState> states);
LatencyStats latency_stats(std::span<const double> per_token_ms);

struct ParsedAnswer {
    bool answer = false;
    bool flagged = false;  // no affirmative/negative keyword found
};

// First affirmative or negative keyword wins, case-insensitively. Text with
// neither counts as "no" and is flagged.
ParsedAnswer extract_yes_no(std::string_view text);

// Maps surface forms to canonical object names. Unknown words fold to
// themselves.
class SynonymTable {
public:
    SynonymTable() = default;

    // {"canonical": ["synonym", ...], ...}
    static SynonymTable from_json(const std::string& text);

    void add(const std::string& canonical, const std::string& synonym);
    std::string fold(std::string_view word) const;
    bool is_object(std::string_view word) const;
    const std::set<std::string>& canonical_names() const noexcept { return canonical_; }

private:
    std::map<std::string, std::string> to_canonical_;
    std::set<std::string> canonical_;
};

// Builds a caption record from sentences by keyword lookup in `synonyms`.
CaptionRecord caption_record_from_text(const std::vector<std::string>& sentences,
                                       const std::set<std::string>& ground_truth,
                                       const SynonymTable& synonyms);

// Histogram of values over [0, upper) split into `bins` equal bins; values
// at or above `upper` land in a final overflow bin.
struct Histogram {
    double upper = 0.6;
    std::vector<std::size_t> counts;  // bins + 1 (overflow)
    std::size_t total = 0;

    double bin_width() const { return upper / static_cast<double>(counts.size() - 1); }
    double fraction(std::size_t bin) const;
};

Histogram histogram(std::span<const double> values, std::size_t bins = 10, double upper = 0.6);

// File formats accepted by the `score` command.
std::vector<BinaryOutcome> pope_outcomes_from_jsonl(const std::string& text,
                                                    std::size_t* flagged = nullptr);
std::vector<CaptionRecord> caption_records_from_json(const std::string& text,
                                                     const SynonymTable& synonyms);

}  // namespace hdd::metrics
