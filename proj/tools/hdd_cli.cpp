// hdd_cli: benchmark, probe, record, replay and sweep runs, plus a wire
// protocol server for the synthetic and echo backends.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>
#include <vector>

#include "CLI11.hpp"
#include "hdd/error.hpp"
#include "hdd/metrics.hpp"
#include "hdd/runner.hpp"
#include "hdd/synth.hpp"
#include "hdd/wire.hpp"
#include "json.hpp"

namespace {

using namespace hdd;
using runner::RunConfig;

struct RunFlags {
    std::string config_file;
    std::optional<double> alpha, beta, segment_fraction, temperature;
    std::optional<std::string> strategy;
    std::optional<int> beam_width, max_new_tokens;
    std::optional<std::string> provider, dataset, subset, suite_file;
    std::optional<int> scenes;
    std::optional<std::uint64_t> seed, sample_seed;
    std::optional<std::string> out;
    bool no_vanilla = false, no_hdd = false, serial_fetch = false;
    std::optional<int> workers;
    std::optional<double> fetch_delay_ms, timeout_s;
};

void add_run_flags(CLI::App* cmd, RunFlags& f, bool with_methods) {
    cmd->add_option("--config", f.config_file, "JSON run config; flags override it");
    cmd->add_option("--alpha", f.alpha, "contrast strength (default 0.6)");
    cmd->add_option("--beta", f.beta, "plausibility cutoff (default 0.1)");
    cmd->add_option("--segment-fraction", f.segment_fraction, "share of objects in segment a (default 0.05)");
    cmd->add_option("--temperature", f.temperature, "softmax temperature (default 1)");
    cmd->add_option("--strategy", f.strategy, "greedy | beam | multinomial");
    cmd->add_option("--beam-width", f.beam_width, "beam size (default 2)");
    cmd->add_option("--max-new-tokens", f.max_new_tokens, "generation limit (default 64)");
    cmd->add_option("--provider", f.provider, "synthetic | replay:<trace> | adapter:<command|unix:path|tcp:host:port>");
    cmd->add_option("--dataset", f.dataset, "pope | caption");
    cmd->add_option("--subset", f.subset, "random | popular | adversarial");
    cmd->add_option("--suite", f.suite_file, "POPE suite file instead of a generated suite");
    cmd->add_option("--scenes", f.scenes, "number of synthetic scenes");
    cmd->add_option("--seed", f.seed, "suite seed");
    cmd->add_option("--sample-seed", f.sample_seed, "sampling seed for multinomial decoding");
    cmd->add_option("-o,--out", f.out, "output directory");
    if (with_methods) {
        cmd->add_flag("--no-vanilla", f.no_vanilla, "skip the vanilla baseline");
        cmd->add_flag("--no-hdd", f.no_hdd, "skip HDD decoding");
    }
    cmd->add_flag("--serial-fetch", f.serial_fetch, "issue the four per-step fetches one at a time");
    cmd->add_option("-j,--workers", f.workers, "concurrent decodes");
    cmd->add_option("--fetch-delay-ms", f.fetch_delay_ms, "inject latency per fetch");
    cmd->add_option("--timeout", f.timeout_s, "adapter response timeout in seconds");
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::persistence, "cannot read " + path);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void spill(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::persistence, "cannot write " + path);
    out << text;
}

// Defaults, then config file, then environment, then flags.
RunConfig resolve(const RunFlags& f) {
    RunConfig cfg;
    if (!f.config_file.empty()) cfg = runner::config_from_json(slurp(f.config_file), cfg);
    if (const char* a = std::getenv("HDD_ADAPTER"); a && *a) cfg.provider = std::string("adapter:") + a;
    if (const char* t = std::getenv("HDD_TIMEOUT_S"); t && *t) {
        try {
            cfg.timeout_s = std::stod(t);
        } catch (const std::exception&) {
            throw Error(ErrorKind::invalid_input, "HDD_TIMEOUT_S is not a number");
        }
    }
    if (f.alpha) cfg.hdd.alpha = *f.alpha;
    if (f.beta) cfg.hdd.beta = *f.beta;
    if (f.segment_fraction) cfg.hdd.segment_fraction = *f.segment_fraction;
    if (f.temperature) cfg.hdd.temperature = *f.temperature;
    if (f.strategy) cfg.hdd.strategy = parse_strategy(*f.strategy);
    if (f.beam_width) cfg.hdd.beam_width = *f.beam_width;
    if (f.max_new_tokens) cfg.hdd.max_new_tokens = *f.max_new_tokens;
    if (f.provider) cfg.provider = *f.provider;
    if (f.dataset) cfg.dataset = runner::parse_dataset(*f.dataset);
    if (f.subset) cfg.subset = synth::parse_subset(*f.subset);
    if (f.suite_file) cfg.suite_file = *f.suite_file;
    if (f.scenes) cfg.n_scenes = *f.scenes;
    if (f.seed) cfg.suite_seed = *f.seed;
    if (f.sample_seed) cfg.sample_seed = *f.sample_seed;
    if (f.out) cfg.output_dir = *f.out;
    if (f.no_vanilla) cfg.run_vanilla = false;
    if (f.no_hdd) cfg.run_hdd = false;
    if (f.serial_fetch) cfg.concurrent_fetch = false;
    if (f.workers) cfg.workers = *f.workers;
    if (f.fetch_delay_ms) cfg.fetch_delay_ms = *f.fetch_delay_ms;
    if (f.timeout_s) cfg.timeout_s = *f.timeout_s;
    cfg.validate();
    return cfg;
}

void finish(const runner::BenchmarkReport& report) {
    if (!report.cfg.output_dir.empty()) {
        runner::write_report(report, report.cfg.output_dir);
        std::cerr << "report written to " << report.cfg.output_dir.string() << "\n";
    }
    std::cout << runner::summary_text(report);
}

int serve(const std::string& backend, const std::string& task, const std::string& listen, int echo_vocab,
          const std::vector<double>& echo_fixed, bool reverse_pairs, const std::string& sim_config) {
    std::unique_ptr<synth::Simulator> sim;
    std::unique_ptr<LogitProvider> provider;
    if (backend == "synthetic") {
        RunConfig cfg;
        if (!sim_config.empty()) cfg = runner::config_from_json(slurp(sim_config), cfg);
        sim = std::make_unique<synth::Simulator>(cfg.sim);
        provider = std::make_unique<synth::SyntheticProvider>(
            *sim, task == "caption" ? synth::Task::caption : synth::Task::pope);
    } else if (backend == "echo") {
        provider = echo_fixed.empty() ? std::make_unique<EchoProvider>(echo_vocab)
                                      : std::make_unique<EchoProvider>(echo_fixed);
    } else {
        throw Error(ErrorKind::invalid_input, "unknown backend '" + backend + "'");
    }
    ServeOptions opts;
    opts.reverse_pairs = reverse_pairs;
    if (listen == "stdio") {
        serve_wire(*provider, STDIN_FILENO, STDOUT_FILENO, opts);
    } else if (listen.rfind("unix:", 0) == 0) {
        serve_unix_once(*provider, listen.substr(5), opts);
    } else {
        throw Error(ErrorKind::invalid_input, "--listen must be stdio or unix:<path>");
    }
    return 0;
}

int score(const std::string& kind, const std::string& input, const std::string& synonyms_path) {
    nlohmann::json out;
    if (kind == "pope") {
        std::size_t flagged = 0;
        const auto outcomes = metrics::pope_outcomes_from_jsonl(slurp(input), &flagged);
        const auto m = metrics::pope_metrics(outcomes);
        out = {{"n", outcomes.size()},   {"unparsed_answers", flagged}, {"accuracy", m.accuracy},
               {"precision", m.precision}, {"recall", m.recall},         {"f1", m.f1},
               {"f1_undefined", m.f1_undefined}, {"yes_ratio", m.yes_ratio}};
    } else if (kind == "chair") {
        if (synonyms_path.empty()) throw Error(ErrorKind::invalid_input, "chair scoring needs --synonyms");
        const auto table = metrics::SynonymTable::from_json(slurp(synonyms_path));
        const auto records = metrics::caption_records_from_json(slurp(input), table);
        const auto m = metrics::chair_metrics(records);
        out = {{"n", records.size()},       {"chair_s", m.chair_s}, {"chair_i", m.chair_i},
               {"recall", m.recall},        {"avg_length", m.avg_length},
               {"macro_chair_s", m.macro_chair_s}, {"macro_chair_i", m.macro_chair_i},
               {"macro_recall", m.macro_recall}};
    } else {
        throw Error(ErrorKind::invalid_input, "score kind must be pope or chair");
    }
    std::cout << out.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hallucination disentangled decoding: benchmarks, probes and trace tools"};
    app.require_subcommand(1);
    app.set_version_flag("--version", runner::kVersion);

    RunFlags bench_flags, probe_flags, record_flags, sweep_flags;
    auto* bench = app.add_subcommand("benchmark", "decode a suite with vanilla and HDD and report metrics");
    add_run_flags(bench, bench_flags, true);

    auto* sweep = app.add_subcommand("sweep", "benchmark plus an HDD pass per alpha");
    add_run_flags(sweep, sweep_flags, true);
    std::vector<double> alphas{0.2, 0.4, 0.6, 0.8, 1.0};
    sweep->add_option("--alphas", alphas, "alpha values")->delimiter(',');

    auto* probe = app.add_subcommand("probe", "blank-image context swap probe");
    add_run_flags(probe, probe_flags, false);

    auto* rec = app.add_subcommand("record", "run a benchmark and save every provider response");
    add_run_flags(rec, record_flags, true);
    std::string record_trace;
    rec->add_option("--trace", record_trace, "trace output file")->required();

    auto* rep = app.add_subcommand("replay", "re-run a recorded benchmark from its trace alone");
    std::string replay_trace, replay_out;
    int replay_workers = 1;
    rep->add_option("trace", replay_trace, "trace file")->required();
    rep->add_option("-o,--out", replay_out, "output directory");
    rep->add_option("-j,--workers", replay_workers, "concurrent decodes");

    auto* suite = app.add_subcommand("suite", "write a synthetic POPE suite file");
    std::string suite_subset = "adversarial", suite_out;
    int suite_scenes = 100;
    std::uint64_t suite_seed = 7;
    double suite_fraction = 0.05;
    suite->add_option("--subset", suite_subset, "random | popular | adversarial");
    suite->add_option("--scenes", suite_scenes, "number of scenes");
    suite->add_option("--seed", suite_seed, "suite seed");
    suite->add_option("--segment-fraction", suite_fraction, "share of objects in segment a");
    suite->add_option("-o,--out", suite_out, "output file")->required();

    auto* srv = app.add_subcommand("serve", "answer wire protocol requests");
    std::string backend = "synthetic", task = "pope", listen = "stdio", sim_config;
    int echo_vocab = 16;
    bool reverse_pairs = false;
    srv->add_option("--backend", backend, "synthetic | echo");
    srv->add_option("--task", task, "pope | caption (synthetic backend)");
    srv->add_option("--listen", listen, "stdio | unix:<path>");
    std::vector<double> echo_fixed;
    srv->add_option("--echo-vocab", echo_vocab, "vocabulary size of the echo backend");
    srv->add_option("--echo-fixed", echo_fixed, "serve this logit vector for every request")->delimiter(',');
    srv->add_option("--sim-config", sim_config, "run config whose sim section configures the simulator");
    srv->add_flag("--reverse-pairs", reverse_pairs, "answer requests pairwise out of order");

    auto* sc = app.add_subcommand("score", "score answer or caption files");
    std::string score_kind, score_input, score_synonyms;
    sc->add_option("kind", score_kind, "pope | chair")->required();
    sc->add_option("input", score_input, "answers (JSON Lines) or captions (JSON)")->required();
    sc->add_option("--synonyms", score_synonyms, "synonym table for chair");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*bench) {
            finish(runner::run_benchmark(resolve(bench_flags)));
        } else if (*sweep) {
            RunConfig cfg = resolve(sweep_flags);
            cfg.sweep_alphas = alphas;
            cfg.validate();
            finish(runner::run_benchmark(cfg));
        } else if (*probe) {
            RunConfig cfg = resolve(probe_flags);
            const auto report = runner::probe_inertia(cfg);
            if (!cfg.output_dir.empty()) {
                std::filesystem::create_directories(cfg.output_dir);
                spill((cfg.output_dir / "probe.json").string(), runner::probe_to_json(report));
                spill((cfg.output_dir / "probe.csv").string(), runner::probe_to_csv(report));
                spill((cfg.output_dir / "config.json").string(), runner::config_to_json(cfg) + "\n");
            }
            std::cout << "biased context raised the yes-logit in " << report.increased << "/" << report.rows.size()
                      << " scenes\n";
        } else if (*rec) {
            finish(runner::record(resolve(record_flags), record_trace));
            std::cerr << "trace written to " << record_trace << "\n";
        } else if (*rep) {
            RunConfig overrides;
            overrides.output_dir = replay_out;
            overrides.workers = replay_workers;
            finish(runner::replay(replay_trace, &overrides));
        } else if (*suite) {
            const synth::Simulator sim;
            const auto items = synth::make_pope_suite(sim, suite_scenes, synth::parse_subset(suite_subset),
                                                      suite_seed, suite_fraction);
            spill(suite_out, synth::pope_suite_to_json(items));
            std::cerr << items.size() << " queries written to " << suite_out << "\n";
        } else if (*srv) {
            return serve(backend, task, listen, echo_vocab, echo_fixed, reverse_pairs, sim_config);
        } else if (*sc) {
            return score(score_kind, score_input, score_synonyms);
        }
    } catch (const Error& e) {
        std::cerr << "hdd_cli: " << to_string(e.kind()) << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "hdd_cli: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
