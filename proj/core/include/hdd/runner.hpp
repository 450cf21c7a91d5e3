#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "hdd/decode.hpp"
#include "hdd/metrics.hpp"
#include "hdd/provider.hpp"
#include "hdd/synth.hpp"
#include "hdd/types.hpp"

namespace hdd::runner {

inline constexpr const char* kVersion = "0.1.0";

enum class DatasetKind { pope, caption };

const char* to_string(DatasetKind k) noexcept;
DatasetKind parse_dataset(const std::string& name);

struct RunConfig {
    HddConfig hdd;

    // "synthetic", "replay:<trace>" or "adapter:<command | unix:path | tcp:host:port>".
    std::string provider = "synthetic";

    DatasetKind dataset = DatasetKind::pope;
    synth::PopeSubset subset = synth::PopeSubset::adversarial;
    int n_scenes = 100;
    std::uint64_t suite_seed = 7;
    // POPE suite file; replaces generation when set.
    std::string suite_file;

    std::filesystem::path output_dir;
    bool run_vanilla = true;
    bool run_hdd = true;
    // Extra HDD passes with these alphas (POPE only).
    std::vector<double> sweep_alphas;

    int workers = 1;
    bool concurrent_fetch = true;
    std::uint64_t sample_seed = 0;
    // Injected per-fetch latency.
    double fetch_delay_ms = 0.0;
    double timeout_s = 120.0;

    synth::SimConfig sim;

    void validate() const;
};

std::string config_to_json(const RunConfig& cfg);
// Fields missing from `text` keep their value from `base`.
RunConfig config_from_json(const std::string& text, RunConfig base = {});

// Owns the provider stack described by a RunConfig.
class ProviderStack {
public:
    ProviderStack(const RunConfig& cfg, synth::Task task);
    ~ProviderStack();

    LogitProvider& get() noexcept { return *top_; }
    std::string identity() const { return top_->identity(); }

private:
    std::unique_ptr<synth::Simulator> sim_;
    std::unique_ptr<LogitProvider> base_;
    std::unique_ptr<LogitProvider> delayed_;
    LogitProvider* top_ = nullptr;
};

enum class Method { vanilla, hdd };

const char* to_string(Method m) noexcept;

struct MethodResult {
    Method method = Method::hdd;
    HddConfig hdd;
    std::vector<DecodeState> states;
    std::optional<metrics::PopeMetrics> pope;
    std::optional<metrics::ChairMetrics> chair;
    metrics::LatencyStats latency;
};

// Decodes every item with `workers` threads. Item i uses sampling seed
// sample_seed + i, so results do not depend on the worker count.
std::vector<DecodeState> decode_pope(const std::vector<synth::PopeItem>& items, LogitProvider& provider,
                                     Method method, const HddConfig& hdd, int workers,
                                     bool concurrent_fetch, std::uint64_t sample_seed);
std::vector<DecodeState> decode_captions(const std::vector<synth::CaptionItem>& items,
                                         LogitProvider& provider, Method method, const HddConfig& hdd,
                                         int workers, bool concurrent_fetch, std::uint64_t sample_seed);

// First generated token is the answer.
std::vector<metrics::BinaryOutcome> pope_outcomes(const std::vector<synth::PopeItem>& items,
                                                  const std::vector<DecodeState>& states);
std::vector<metrics::CaptionRecord> caption_records(const synth::Simulator& sim,
                                                    const std::vector<synth::CaptionItem>& items,
                                                    const std::vector<DecodeState>& states);
std::string object_name(int object_id);

// First-token delta of every HDD decode.
std::vector<double> first_token_deltas(const std::vector<DecodeState>& states);

struct SweepRow {
    double alpha = 0.0;
    metrics::PopeMetrics pope;
};

struct BenchmarkReport {
    RunConfig cfg;
    std::string provider_identity;
    std::size_t n_items = 0;
    std::optional<MethodResult> vanilla;
    std::optional<MethodResult> hdd;
    std::vector<SweepRow> sweep;
    std::optional<metrics::Histogram> delta_histogram;
};

std::vector<synth::PopeItem> build_pope_suite(const RunConfig& cfg);
std::vector<synth::CaptionItem> build_caption_suite(const RunConfig& cfg);

BenchmarkReport run_benchmark(const RunConfig& cfg);
BenchmarkReport run_benchmark(const RunConfig& cfg, LogitProvider& provider);

// Writes report.json, summary.txt, metrics.csv, latency.csv, items.csv,
// delta_histogram.csv, alpha_sweep.csv and config.json into `dir`.
void write_report(const BenchmarkReport& report, const std::filesystem::path& dir);
std::string summary_text(const BenchmarkReport& report);

// Runs a benchmark through a recording provider and saves the session.
BenchmarkReport record(const RunConfig& cfg, const std::filesystem::path& trace_path);

// Re-runs the configuration stored in a trace against the trace alone.
// `overrides` may change the output directory and worker count only.
BenchmarkReport replay(const std::filesystem::path& trace_path, const RunConfig* overrides = nullptr);

struct ProbeRow {
    std::uint64_t scene = 0;
    int object_id = 0;
    int neutral_context = 0;
    int biased_context = 0;
    double yes_logit_neutral = 0.0;
    double yes_logit_biased = 0.0;
};

struct ProbeReport {
    std::string provider_identity;
    std::vector<ProbeRow> rows;
    std::size_t increased = 0;
};

// Blank-image probe: for each scene, asks about its largest object under the
// neutral context and under that object's most biased context word.
ProbeReport probe_inertia(const RunConfig& cfg, LogitProvider& provider);
ProbeReport probe_inertia(const RunConfig& cfg);
std::string probe_to_json(const ProbeReport& report);
std::string probe_to_csv(const ProbeReport& report);

}  // namespace hdd::runner
