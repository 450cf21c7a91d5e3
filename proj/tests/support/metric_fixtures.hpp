#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "hdd/metrics.hpp"

// Hand-computed metric cases shared by the unit and acceptance tests.
namespace fixtures {

using hdd::metrics::BinaryOutcome;
using hdd::metrics::CaptionRecord;
using hdd::metrics::CaptionSentence;

struct PopeCase {
    std::string name;
    std::vector<BinaryOutcome> outcomes;
    double accuracy, precision, recall, f1, yes_ratio;
    bool f1_undefined;
};

struct ChairCase {
    std::string name;
    std::vector<CaptionRecord> records;
    double chair_i, chair_s, recall, avg_length;
};

inline std::vector<BinaryOutcome> confusion(int tp, int fp, int fn, int tn) {
    std::vector<BinaryOutcome> out;
    for (int i = 0; i < tp; ++i) out.push_back({true, true});
    for (int i = 0; i < fp; ++i) out.push_back({true, false});
    for (int i = 0; i < fn; ++i) out.push_back({false, true});
    for (int i = 0; i < tn; ++i) out.push_back({false, false});
    return out;
}

inline std::vector<PopeCase> pope_cases() {
    return {
        {"all correct, balanced", confusion(5, 0, 0, 5), 1.0, 1.0, 1.0, 1.0, 0.5, false},
        {"tp40 fp10 fn20 tn30", confusion(40, 10, 20, 30), 0.7, 0.8, 2.0 / 3.0, 16.0 / 22.0, 0.5, false},
        {"all no on balanced set", confusion(0, 0, 10, 10), 0.5, 0.0, 0.0, 0.0, 0.0, true},
        {"all yes on balanced set", confusion(10, 10, 0, 0), 0.5, 0.5, 1.0, 2.0 / 3.0, 1.0, false},
        {"all wrong", confusion(0, 3, 3, 0), 0.0, 0.0, 0.0, 0.0, 0.5, true},
        {"single true positive", confusion(1, 0, 0, 0), 1.0, 1.0, 1.0, 1.0, 1.0, false},
        {"tp3 fp1 fn2 tn4", confusion(3, 1, 2, 4), 0.7, 0.75, 0.6, 0.9 / 1.35, 0.4, false},
    };
}

inline CaptionRecord record(std::vector<std::vector<std::string>> sentences, std::set<std::string> truth,
                            std::size_t length) {
    CaptionRecord r;
    r.ground_truth_objects = std::move(truth);
    r.length_tokens = length;
    for (auto& s : sentences) {
        CaptionSentence cs{"", {s.begin(), s.end()}};
        r.generated_objects.insert(s.begin(), s.end());
        r.sentences.push_back(std::move(cs));
    }
    return r;
}

inline std::vector<ChairCase> chair_cases() {
    return {
        {"cat dog car", {record({{"cat", "dog"}, {"car"}}, {"cat", "dog"}, 12)}, 1.0 / 3.0, 0.5, 1.0, 12.0},
        {"generated equals truth", {record({{"cat"}, {"dog"}}, {"cat", "dog"}, 6),
                                    record({{"bus"}}, {"bus"}, 4)}, 0.0, 0.0, 1.0, 5.0},
        {"empty generation", {record({}, {"cat"}, 0)}, 0.0, 0.0, 0.0, 0.0},
        {"pooled over records",
         {record({{"cat", "tv"}}, {"cat"}, 5), record({{"dog"}, {"cup"}, {"bed"}}, {"dog", "bed", "sofa"}, 9)},
         2.0 / 5.0, 2.0 / 4.0, 3.0 / 4.0, 7.0}};
}

inline bool near(double a, double b) { return std::fabs(a - b) <= 1e-12; }

}  // namespace fixtures
