#include <algorithm>
#include <random>

#include "doctest.h"
#include "hdd/error.hpp"
#include "hdd/metrics.hpp"
#include "../support/metric_fixtures.hpp"

using namespace hdd;
using namespace hdd::metrics;

TEST_CASE("POPE fixtures") {
    for (const auto& c : fixtures::pope_cases()) {
        CAPTURE(c.name);
        const auto m = pope_metrics(c.outcomes);
        CHECK(fixtures::near(m.accuracy, c.accuracy));
        CHECK(fixtures::near(m.precision, c.precision));
        CHECK(fixtures::near(m.recall, c.recall));
        CHECK(fixtures::near(m.f1, c.f1));
        CHECK(fixtures::near(m.yes_ratio, c.yes_ratio));
        CHECK(m.f1_undefined == c.f1_undefined);
        CHECK(m.tp + m.fp + m.fn + m.tn == c.outcomes.size());
    }
    CHECK_THROWS_AS(pope_metrics({}), Error);
}

TEST_CASE("POPE metrics ignore outcome order") {
    std::mt19937_64 rng(5);
    auto outcomes = fixtures::confusion(13, 7, 4, 9);
    const auto ref = pope_metrics(outcomes);
    for (int i = 0; i < 20; ++i) {
        std::shuffle(outcomes.begin(), outcomes.end(), rng);
        const auto m = pope_metrics(outcomes);
        CHECK(m.f1 == ref.f1);
        CHECK(m.accuracy == ref.accuracy);
    }
}

TEST_CASE("CHAIR fixtures") {
    for (const auto& c : fixtures::chair_cases()) {
        CAPTURE(c.name);
        const auto m = chair_metrics(c.records);
        CHECK(fixtures::near(m.chair_i, c.chair_i));
        CHECK(fixtures::near(m.chair_s, c.chair_s));
        CHECK(fixtures::near(m.recall, c.recall));
        CHECK(fixtures::near(m.avg_length, c.avg_length));
        CHECK(m.per_record.size() == c.records.size());
    }
}

TEST_CASE("pooled and per-record CHAIR differ when records differ in size") {
    const auto c = fixtures::chair_cases()[3];
    const auto m = chair_metrics(c.records);
    CHECK(fixtures::near(m.macro_chair_i, (0.5 + 1.0 / 3.0) / 2.0));
    CHECK(fixtures::near(m.macro_recall, (1.0 + 2.0 / 3.0) / 2.0));
}

TEST_CASE("a clean record never raises CHAIR") {
    std::mt19937_64 rng(8);
    const std::vector<std::string> names{"cat", "dog", "car", "cup", "tv", "bed"};
    for (int i = 0; i < 200; ++i) {
        std::vector<CaptionRecord> records;
        for (int r = 0; r < 3; ++r) {
            std::vector<std::vector<std::string>> sentences;
            for (int s = 0; s < 1 + static_cast<int>(rng() % 3); ++s) sentences.push_back({names[rng() % 6]});
            records.push_back(fixtures::record(sentences, {names[rng() % 6], names[rng() % 6]}, 5));
        }
        const auto before = chair_metrics(records);
        CHECK(before.chair_i >= 0.0);
        CHECK(before.chair_i <= 1.0);
        CHECK(before.chair_s >= 0.0);
        CHECK(before.chair_s <= 1.0);
        records.push_back(fixtures::record({{"cat"}, {"dog"}}, {"cat", "dog"}, 5));
        const auto after = chair_metrics(records);
        CHECK(after.chair_i <= before.chair_i);
        CHECK(after.chair_s <= before.chair_s);
    }
}

TEST_CASE("CHAIR input validation") {
    CHECK_THROWS_AS(chair_metrics({}), Error);
    const std::vector<CaptionRecord> no_truth{fixtures::record({{"cat"}}, {}, 1)};
    CHECK_THROWS_AS(chair_metrics(no_truth), Error);
    auto r = fixtures::record({{"cat"}}, {"cat"}, 1);
    r.sentences[0].mentioned.insert("ghost");
    const std::vector<CaptionRecord> stray{r};
    CHECK_THROWS_AS(chair_metrics(stray), Error);
}

TEST_CASE("latency statistics") {
    const std::vector<double> ms{10, 20, 30, 40};
    const auto s = latency_stats(std::span<const double>(ms));
    CHECK(s.tokens == 4);
    CHECK(s.ms_per_token_mean == 25.0);
    CHECK(s.p50 == 25.0);
    CHECK(fixtures::near(s.p95, 38.5));

    const std::vector<double> flat(7, 10.0);
    const auto f = latency_stats(std::span<const double>(flat));
    CHECK(f.ms_per_token_mean == 10.0);
    CHECK(f.p95 == 10.0);

    DecodeState a, b;
    a.per_token_latency_ms = {10, 20};
    b.per_token_latency_ms = {30, 40};
    const std::vector<DecodeState> states{a, b};
    CHECK(latency_stats(std::span<const DecodeState>(states)).ms_per_token_mean == 25.0);
    CHECK_THROWS_AS(latency_stats(std::span<const double>()), Error);
}

TEST_CASE("yes/no extraction") {
    CHECK(extract_yes_no("Yes, there is a dog.").answer);
    CHECK_FALSE(extract_yes_no("No.").answer);
    CHECK_FALSE(extract_yes_no("There is not a cat, yes").answer);
    CHECK(extract_yes_no("yeah").answer);
    const auto none = extract_yes_no("maybe");
    CHECK_FALSE(none.answer);
    CHECK(none.flagged);
    CHECK(extract_yes_no("Nobody knows").flagged);
}

TEST_CASE("synonym folding") {
    const auto t = SynonymTable::from_json(R"({"person": ["man", "woman", "people"], "tv": ["television"]})");
    CHECK(t.fold("Man") == "person");
    CHECK(t.fold("television") == "tv");
    CHECK(t.fold("tree") == "tree");
    CHECK(t.is_object("people"));
    CHECK_FALSE(t.is_object("tree"));
    CHECK(t.canonical_names() == std::set<std::string>{"person", "tv"});
    CHECK_THROWS_AS(SynonymTable::from_json("[1,"), Error);

    const auto r = caption_record_from_text({"A man watches television.", "A cat sleeps."}, {"woman", "tv"}, t);
    CHECK(r.ground_truth_objects == std::set<std::string>{"person", "tv"});
    CHECK(r.generated_objects == std::set<std::string>{"person", "tv"});
    CHECK(r.length_tokens == 7);
}

TEST_CASE("histogram binning") {
    const std::vector<double> v{0.0, 0.01, 0.059, 0.07, 0.33, 0.59, 0.6, 0.9};
    const auto h = histogram(v);
    REQUIRE(h.counts.size() == 11);
    CHECK(h.counts[0] == 3);
    CHECK(h.counts[1] == 1);
    CHECK(h.counts[5] == 1);
    CHECK(h.counts[9] == 1);
    CHECK(h.counts[10] == 2);
    CHECK(h.total == 8);
    CHECK(h.fraction(0) == 3.0 / 8.0);
    CHECK(fixtures::near(h.bin_width(), 0.06));
    CHECK_THROWS_AS(histogram(v, 0), Error);
}

TEST_CASE("score input files") {
    std::size_t flagged = 0;
    const auto outcomes = pope_outcomes_from_jsonl(
        "{\"answer\":\"Yes.\",\"label\":\"yes\"}\n\n{\"answer\":\"hmm\",\"label\":\"no\"}\n", &flagged);
    REQUIRE(outcomes.size() == 2);
    CHECK(outcomes[0].predicted);
    CHECK(outcomes[0].actual);
    CHECK_FALSE(outcomes[1].predicted);
    CHECK(flagged == 1);
    CHECK_THROWS_AS(pope_outcomes_from_jsonl("{\"answer\":\"yes\",\"label\":\"?\"}"), Error);
    CHECK_THROWS_AS(pope_outcomes_from_jsonl("{"), Error);

    SynonymTable t;
    t.add("cat", "cat");
    t.add("dog", "dog");
    const auto recs = caption_records_from_json(
        R"({"records":[{"sentences":["a cat","a dog"],"ground_truth":["cat"],"length":9}]})", t);
    REQUIRE(recs.size() == 1);
    CHECK(recs[0].length_tokens == 9);
    CHECK(fixtures::near(chair_metrics(recs).chair_i, 0.5));
    CHECK_THROWS_AS(caption_records_from_json("{}", t), Error);
}
