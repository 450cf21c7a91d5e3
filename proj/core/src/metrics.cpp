#include "hdd/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

#include "hdd/error.hpp"
#include "json.hpp"

namespace hdd::metrics {
namespace {

using json = nlohmann::json;

double ratio(std::size_t num, std::size_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::vector<std::string> words(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c)) || c == '-') {
            cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

double percentile(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace

PopeMetrics pope_metrics(std::span<const BinaryOutcome> outcomes) {
    if (outcomes.empty()) throw Error(ErrorKind::invalid_input, "pope_metrics: no outcomes");
    PopeMetrics m;
    for (const auto& o : outcomes) {
        if (o.predicted && o.actual) ++m.tp;
        else if (o.predicted && !o.actual) ++m.fp;
        else if (!o.predicted && o.actual) ++m.fn;
        else ++m.tn;
    }
    const std::size_t n = outcomes.size();
    m.accuracy = ratio(m.tp + m.tn, n);
    m.yes_ratio = ratio(m.tp + m.fp, n);
    m.precision = ratio(m.tp, m.tp + m.fp);
    m.recall = ratio(m.tp, m.tp + m.fn);
    if (m.tp + m.fp == 0 || m.tp + m.fn == 0 || m.precision + m.recall == 0.0) {
        m.f1_undefined = true;
        m.f1 = 0.0;
    } else {
        m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    }
    return m;
}

ChairMetrics chair_metrics(std::span<const CaptionRecord> records) {
    if (records.empty()) throw Error(ErrorKind::invalid_input, "chair_metrics: no records");

    ChairMetrics m;
    std::size_t generated = 0, hallucinated = 0, sentences = 0, bad_sentences = 0;
    std::size_t truth = 0, hit = 0, tokens = 0;
    for (const auto& r : records) {
        if (r.ground_truth_objects.empty()) {
            throw Error(ErrorKind::invalid_input, "chair_metrics: record without ground-truth objects");
        }
        std::size_t r_hall = 0, r_hit = 0, r_bad = 0;
        for (const auto& obj : r.generated_objects) {
            if (r.ground_truth_objects.count(obj) != 0) ++r_hit;
            else ++r_hall;
        }
        for (const auto& s : r.sentences) {
            bool bad = false;
            for (const auto& obj : s.mentioned) {
                if (r.generated_objects.count(obj) == 0) {
                    throw Error(ErrorKind::invalid_input,
                                "chair_metrics: sentence mentions '" + obj + "' outside generated_objects");
                }
                bad = bad || r.ground_truth_objects.count(obj) == 0;
            }
            if (bad) ++r_bad;
        }
        generated += r.generated_objects.size();
        hallucinated += r_hall;
        sentences += r.sentences.size();
        bad_sentences += r_bad;
        truth += r.ground_truth_objects.size();
        hit += r_hit;
        tokens += r.length_tokens;
        m.per_record.push_back({ratio(r_hall, r.generated_objects.size()), ratio(r_bad, r.sentences.size()),
                                ratio(r_hit, r.ground_truth_objects.size())});
    }
    m.chair_i = ratio(hallucinated, generated);
    m.chair_s = ratio(bad_sentences, sentences);
    m.recall = ratio(hit, truth);
    m.avg_length = static_cast<double>(tokens) / static_cast<double>(records.size());

    const auto n = static_cast<double>(records.size());
    for (const auto& r : m.per_record) {
        m.macro_chair_i += r.chair_i / n;
        m.macro_chair_s += r.chair_s / n;
        m.macro_recall += r.recall / n;
    }
    return m;
}

LatencyStats latency_stats(std::span<const double> per_token_ms) {
    if (per_token_ms.empty()) throw Error(ErrorKind::invalid_input, "latency_stats: no tokens");
    std::vector<double> sorted(per_token_ms.begin(), per_token_ms.end());
    std::sort(sorted.begin(), sorted.end());
    LatencyStats s;
    s.tokens = sorted.size();
    s.ms_per_token_mean = std::accumulate(sorted.begin(), sorted.end(), 0.0) / static_cast<double>(sorted.size());
    s.p50 = percentile(sorted, 0.50);
    s.p95 = percentile(sorted, 0.95);
    return s;
}

LatencyStats latency_stats(std::span<const DecodeState> states) {
    std::vector<double> all;
    for (const auto& st : states) {
        all.insert(all.end(), st.per_token_latency_ms.begin(), st.per_token_latency_ms.end());
    }
    return latency_stats(all);
}

ParsedAnswer extract_yes_no(std::string_view text) {
    static const std::set<std::string> affirmative = {"yes", "yeah", "yep", "true"};
    static const std::set<std::string> negative = {"no", "not", "nope", "false"};
    for (const auto& w : words(text)) {
        if (affirmative.count(w) != 0) return {true, false};
        if (negative.count(w) != 0) return {false, false};
    }
    return {false, true};
}

SynonymTable SynonymTable::from_json(const std::string& text) {
    SynonymTable table;
    try {
        const json doc = json::parse(text);
        for (const auto& [canonical, synonyms] : doc.items()) {
            table.add(canonical, canonical);
            for (const auto& s : synonyms) table.add(canonical, s.get<std::string>());
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::persistence, std::string("malformed synonym table: ") + e.what());
    }
    return table;
}

void SynonymTable::add(const std::string& canonical, const std::string& synonym) {
    const std::string c = lower(canonical);
    canonical_.insert(c);
    to_canonical_[lower(synonym)] = c;
}

std::string SynonymTable::fold(std::string_view word) const {
    const std::string w = lower(word);
    const auto it = to_canonical_.find(w);
    return it == to_canonical_.end() ? w : it->second;
}

bool SynonymTable::is_object(std::string_view word) const {
    return to_canonical_.count(lower(word)) != 0;
}

CaptionRecord caption_record_from_text(const std::vector<std::string>& sentences,
                                       const std::set<std::string>& ground_truth,
                                       const SynonymTable& synonyms) {
    CaptionRecord r;
    for (const auto& g : ground_truth) r.ground_truth_objects.insert(synonyms.fold(g));
    for (const auto& text : sentences) {
        CaptionSentence s{text, {}};
        const auto ws = words(text);
        r.length_tokens += ws.size();
        for (const auto& w : ws) {
            if (synonyms.is_object(w)) s.mentioned.insert(synonyms.fold(w));
        }
        r.generated_objects.insert(s.mentioned.begin(), s.mentioned.end());
        r.sentences.push_back(std::move(s));
    }
    return r;
}

double Histogram::fraction(std::size_t bin) const {
    return total == 0 ? 0.0 : static_cast<double>(counts.at(bin)) / static_cast<double>(total);
}

Histogram histogram(std::span<const double> values, std::size_t bins, double upper) {
    if (bins == 0 || !(upper > 0.0)) throw Error(ErrorKind::invalid_input, "histogram: bad binning");
    Histogram h;
    h.upper = upper;
    h.counts.assign(bins + 1, 0);
    const double width = upper / static_cast<double>(bins);
    for (double v : values) {
        std::size_t bin = bins;
        if (v < upper) bin = std::min(bins - 1, static_cast<std::size_t>(std::max(0.0, v) / width));
        ++h.counts[bin];
        ++h.total;
    }
    return h;
}

std::vector<BinaryOutcome> pope_outcomes_from_jsonl(const std::string& text, std::size_t* flagged) {
    std::vector<BinaryOutcome> out;
    std::size_t n_flagged = 0;
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            const ParsedAnswer a = extract_yes_no(j.at("answer").get<std::string>());
            const ParsedAnswer label = extract_yes_no(j.at("label").get<std::string>());
            if (label.flagged) throw Error(ErrorKind::invalid_input, "label must be yes or no");
            n_flagged += a.flagged ? 1 : 0;
            out.push_back({a.answer, label.answer});
        } catch (const std::exception& e) {
            throw Error(ErrorKind::persistence, "answers line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (flagged) *flagged = n_flagged;
    return out;
}

std::vector<CaptionRecord> caption_records_from_json(const std::string& text, const SynonymTable& synonyms) {
    std::vector<CaptionRecord> out;
    try {
        const json doc = json::parse(text);
        for (const json& j : doc.at("records")) {
            const auto sentences = j.at("sentences").get<std::vector<std::string>>();
            const auto truth = j.at("ground_truth").get<std::set<std::string>>();
            CaptionRecord r = caption_record_from_text(sentences, truth, synonyms);
            if (j.contains("length")) r.length_tokens = j.at("length").get<std::size_t>();
            out.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::persistence, std::string("malformed caption file: ") + e.what());
    }
    return out;
}

}  // namespace hdd::metrics
