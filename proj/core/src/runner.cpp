#include "hdd/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <thread>

#include "hdd/error.hpp"
#include "hdd/trace.hpp"
#include "hdd/wire.hpp"
#include "json.hpp"

namespace hdd::runner {
namespace {

using json = nlohmann::json;

json sim_to_json(const synth::SimConfig& s) {
    return {{"n_objects", s.n_objects},
            {"n_contexts", s.n_contexts},
            {"kappa", s.kappa},
            {"noise_sigma", s.noise_sigma},
            {"no_logit", s.no_logit},
            {"visual_no_bias", s.visual_no_bias},
            {"prior_scale", s.prior_scale},
            {"min_objects", s.min_objects},
            {"max_objects", s.max_objects},
            {"min_coverage", s.min_coverage},
            {"max_coverage", s.max_coverage},
            {"renormalize_segments", s.renormalize_segments},
            {"world_seed", s.world_seed}};
}

template <typename T>
void take(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

synth::SimConfig sim_from_json(const json& j, synth::SimConfig s) {
    take(j, "n_objects", s.n_objects);
    take(j, "n_contexts", s.n_contexts);
    take(j, "kappa", s.kappa);
    take(j, "noise_sigma", s.noise_sigma);
    take(j, "no_logit", s.no_logit);
    take(j, "visual_no_bias", s.visual_no_bias);
    take(j, "prior_scale", s.prior_scale);
    take(j, "min_objects", s.min_objects);
    take(j, "max_objects", s.max_objects);
    take(j, "min_coverage", s.min_coverage);
    take(j, "max_coverage", s.max_coverage);
    take(j, "renormalize_segments", s.renormalize_segments);
    take(j, "world_seed", s.world_seed);
    return s;
}

json hdd_to_json(const HddConfig& h) {
    return {{"alpha", h.alpha},
            {"beta", h.beta},
            {"segment_fraction", h.segment_fraction},
            {"temperature", h.temperature},
            {"strategy", to_string(h.strategy)},
            {"beam_width", h.beam_width},
            {"max_new_tokens", h.max_new_tokens}};
}

json pope_to_json(const metrics::PopeMetrics& m) {
    return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
            {"f1", m.f1},             {"yes_ratio", m.yes_ratio}, {"f1_undefined", m.f1_undefined},
            {"tp", m.tp},             {"fp", m.fp},               {"fn", m.fn},
            {"tn", m.tn}};
}

json chair_to_json(const metrics::ChairMetrics& m) {
    return {{"chair_i", m.chair_i},
            {"chair_s", m.chair_s},
            {"recall", m.recall},
            {"avg_length", m.avg_length},
            {"macro_chair_i", m.macro_chair_i},
            {"macro_chair_s", m.macro_chair_s},
            {"macro_recall", m.macro_recall}};
}

json latency_to_json(const metrics::LatencyStats& l) {
    return {{"tokens", l.tokens}, {"ms_per_token_mean", l.ms_per_token_mean}, {"p50", l.p50}, {"p95", l.p95}};
}

std::string fmt(double v, int digits = 6) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::persistence, "cannot write " + path.string());
    out << text;
    if (!out) throw Error(ErrorKind::persistence, "write failed: " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorKind::persistence, "cannot read " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

// Runs fn(i) for i in [0, n) on up to `workers` threads. The first failure
// stops new work and is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
    const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
        pool.emplace_back([&] {
            while (!failed.load()) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) break;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                    failed = true;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

DecodeState run_one(const ImageQuad& quad, const TokenSequence& prompt, LogitProvider& provider, Method method,
                    const HddConfig& hdd, bool concurrent_fetch, std::uint64_t seed) {
    DecodeOptions opts;
    opts.seed = seed;
    opts.concurrent_fetch = concurrent_fetch;
    if (method == Method::hdd) return decode(quad, prompt, hdd, provider, opts);
    return decode_vanilla(quad.original, prompt, hdd, provider, opts);
}

MethodResult evaluate(const RunConfig& cfg, LogitProvider& provider, Method method, const HddConfig& hdd,
                      const std::vector<synth::PopeItem>* pope, const std::vector<synth::CaptionItem>* caption,
                      const synth::Simulator& sim) {
    MethodResult r;
    r.method = method;
    r.hdd = hdd;
    if (pope) {
        r.states = decode_pope(*pope, provider, method, hdd, cfg.workers, cfg.concurrent_fetch, cfg.sample_seed);
        const auto outcomes = pope_outcomes(*pope, r.states);
        r.pope = metrics::pope_metrics(outcomes);
    } else {
        r.states = decode_captions(*caption, provider, method, hdd, cfg.workers, cfg.concurrent_fetch,
                                   cfg.sample_seed);
        const auto records = caption_records(sim, *caption, r.states);
        r.chair = metrics::chair_metrics(records);
    }
    r.latency = metrics::latency_stats(std::span<const DecodeState>(r.states));
    return r;
}

std::string tokens_string(const TokenSequence& t) {
    std::string s;
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (i) s += ' ';
        s += std::to_string(t[i]);
    }
    return s;
}

}  // namespace

const char* to_string(DatasetKind k) noexcept { return k == DatasetKind::pope ? "pope" : "caption"; }

DatasetKind parse_dataset(const std::string& name) {
    if (name == "pope") return DatasetKind::pope;
    if (name == "caption" || name == "chair") return DatasetKind::caption;
    throw Error(ErrorKind::invalid_input, "unknown dataset '" + name + "'");
}

const char* to_string(Method m) noexcept { return m == Method::hdd ? "hdd" : "vanilla"; }

void RunConfig::validate() const {
    hdd.validate();
    const bool known = provider == "synthetic" || provider.rfind("replay:", 0) == 0 ||
                       provider.rfind("adapter:", 0) == 0;
    if (!known) throw Error(ErrorKind::invalid_input, "provider must be synthetic, replay:<path> or adapter:<target>");
    if (provider.rfind("replay:", 0) == 0 && provider.size() == 7) {
        throw Error(ErrorKind::invalid_input, "replay provider needs a trace path");
    }
    if (provider.rfind("adapter:", 0) == 0 && provider.size() == 8) {
        throw Error(ErrorKind::invalid_input, "adapter provider needs a command or address");
    }
    if (n_scenes <= 0 && suite_file.empty()) throw Error(ErrorKind::invalid_input, "n_scenes must be positive");
    if (!run_vanilla && !run_hdd && sweep_alphas.empty()) {
        throw Error(ErrorKind::invalid_input, "nothing to run: enable vanilla, hdd or a sweep");
    }
    if (dataset == DatasetKind::caption && !suite_file.empty()) {
        throw Error(ErrorKind::invalid_input, "suite files hold POPE suites only");
    }
    if (dataset == DatasetKind::caption && !sweep_alphas.empty()) {
        throw Error(ErrorKind::invalid_input, "alpha sweeps run on POPE suites only");
    }
    for (double a : sweep_alphas) {
        if (!(a >= 0.0)) throw Error(ErrorKind::invalid_input, "sweep alphas must be >= 0");
    }
    if (workers < 1) throw Error(ErrorKind::invalid_input, "workers must be >= 1");
    if (!(fetch_delay_ms >= 0.0)) throw Error(ErrorKind::invalid_input, "fetch delay must be >= 0");
    if (!(timeout_s > 0.0)) throw Error(ErrorKind::invalid_input, "timeout must be positive");
}

std::string config_to_json(const RunConfig& cfg) {
    json j = {{"format", "hdd-run-config"},
              {"version", 1},
              {"hdd_version", kVersion},
              {"hdd", hdd_to_json(cfg.hdd)},
              {"provider", cfg.provider},
              {"dataset", to_string(cfg.dataset)},
              {"subset", synth::to_string(cfg.subset)},
              {"n_scenes", cfg.n_scenes},
              {"suite_seed", cfg.suite_seed},
              {"suite_file", cfg.suite_file},
              {"output_dir", cfg.output_dir.string()},
              {"run_vanilla", cfg.run_vanilla},
              {"run_hdd", cfg.run_hdd},
              {"sweep_alphas", cfg.sweep_alphas},
              {"workers", cfg.workers},
              {"concurrent_fetch", cfg.concurrent_fetch},
              {"sample_seed", cfg.sample_seed},
              {"fetch_delay_ms", cfg.fetch_delay_ms},
              {"timeout_s", cfg.timeout_s},
              {"sim", sim_to_json(cfg.sim)}};
    return j.dump(2);
}

RunConfig config_from_json(const std::string& text, RunConfig cfg) {
    try {
        const json j = json::parse(text);
        if (j.contains("format") && j.at("format") != "hdd-run-config") {
            throw Error(ErrorKind::persistence, "not a run config");
        }
        if (j.contains("hdd")) {
            const json& h = j.at("hdd");
            take(h, "alpha", cfg.hdd.alpha);
            take(h, "beta", cfg.hdd.beta);
            take(h, "segment_fraction", cfg.hdd.segment_fraction);
            take(h, "temperature", cfg.hdd.temperature);
            if (h.contains("strategy")) cfg.hdd.strategy = parse_strategy(h.at("strategy").get<std::string>());
            take(h, "beam_width", cfg.hdd.beam_width);
            take(h, "max_new_tokens", cfg.hdd.max_new_tokens);
        }
        take(j, "provider", cfg.provider);
        if (j.contains("dataset")) cfg.dataset = parse_dataset(j.at("dataset").get<std::string>());
        if (j.contains("subset")) cfg.subset = synth::parse_subset(j.at("subset").get<std::string>());
        take(j, "n_scenes", cfg.n_scenes);
        take(j, "suite_seed", cfg.suite_seed);
        take(j, "suite_file", cfg.suite_file);
        if (j.contains("output_dir")) cfg.output_dir = j.at("output_dir").get<std::string>();
        take(j, "run_vanilla", cfg.run_vanilla);
        take(j, "run_hdd", cfg.run_hdd);
        take(j, "sweep_alphas", cfg.sweep_alphas);
        take(j, "workers", cfg.workers);
        take(j, "concurrent_fetch", cfg.concurrent_fetch);
        take(j, "sample_seed", cfg.sample_seed);
        take(j, "fetch_delay_ms", cfg.fetch_delay_ms);
        take(j, "timeout_s", cfg.timeout_s);
        if (j.contains("sim")) cfg.sim = sim_from_json(j.at("sim"), cfg.sim);
    } catch (const json::exception& e) {
        throw Error(ErrorKind::persistence, std::string("malformed run config: ") + e.what());
    }
    return cfg;
}

ProviderStack::ProviderStack(const RunConfig& cfg, synth::Task task) {
    if (cfg.provider == "synthetic") {
        sim_ = std::make_unique<synth::Simulator>(cfg.sim);
        base_ = std::make_unique<synth::SyntheticProvider>(*sim_, task);
    } else if (cfg.provider.rfind("replay:", 0) == 0) {
        base_ = std::make_unique<ReplayProvider>(load_trace(cfg.provider.substr(7)));
    } else if (cfg.provider.rfind("adapter:", 0) == 0) {
        WireClientOptions opts;
        opts.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(cfg.timeout_s * 1000.0));
        base_ = WireClient::open(cfg.provider.substr(8), opts);
    } else {
        throw Error(ErrorKind::invalid_input, "unknown provider '" + cfg.provider + "'");
    }
    top_ = base_.get();
    if (cfg.fetch_delay_ms > 0.0) {
        const auto us = std::chrono::microseconds(static_cast<std::int64_t>(cfg.fetch_delay_ms * 1000.0));
        delayed_ = std::make_unique<DelayedProvider>(*base_, us);
        top_ = delayed_.get();
    }
}

ProviderStack::~ProviderStack() = default;

std::vector<DecodeState> decode_pope(const std::vector<synth::PopeItem>& items, LogitProvider& provider,
                                     Method method, const HddConfig& hdd, int workers, bool concurrent_fetch,
                                     std::uint64_t sample_seed) {
    std::vector<DecodeState> states(items.size());
    parallel_for(items.size(), workers, [&](std::size_t i) {
        states[i] = run_one(items[i].quad, items[i].prompt, provider, method, hdd, concurrent_fetch,
                            sample_seed + i);
    });
    return states;
}

std::vector<DecodeState> decode_captions(const std::vector<synth::CaptionItem>& items, LogitProvider& provider,
                                         Method method, const HddConfig& hdd, int workers,
                                         bool concurrent_fetch, std::uint64_t sample_seed) {
    std::vector<DecodeState> states(items.size());
    parallel_for(items.size(), workers, [&](std::size_t i) {
        states[i] = run_one(items[i].quad, items[i].prompt, provider, method, hdd, concurrent_fetch,
                            sample_seed + i);
    });
    return states;
}

std::vector<metrics::BinaryOutcome> pope_outcomes(const std::vector<synth::PopeItem>& items,
                                                  const std::vector<DecodeState>& states) {
    if (items.size() != states.size()) throw Error(ErrorKind::invalid_input, "items/states size mismatch");
    std::vector<metrics::BinaryOutcome> out;
    out.reserve(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        const bool yes = !states[i].generated.empty() && states[i].generated.front() == synth::kYes;
        out.push_back({yes, items[i].query.ground_truth});
    }
    return out;
}

std::string object_name(int object_id) { return "object_" + std::to_string(object_id); }

std::vector<metrics::CaptionRecord> caption_records(const synth::Simulator& sim,
                                                    const std::vector<synth::CaptionItem>& items,
                                                    const std::vector<DecodeState>& states) {
    if (items.size() != states.size()) throw Error(ErrorKind::invalid_input, "items/states size mismatch");
    const TokenId period = sim.caption_period();
    const TokenId eos = sim.caption_eos();
    std::vector<metrics::CaptionRecord> out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        metrics::CaptionRecord r;
        for (int o : items[i].ground_truth_objects) r.ground_truth_objects.insert(object_name(o));
        metrics::CaptionSentence sentence;
        auto flush = [&] {
            if (!sentence.text.empty()) r.sentences.push_back(std::move(sentence));
            sentence = {};
        };
        for (TokenId t : states[i].generated) {
            if (t == eos) break;
            ++r.length_tokens;
            if (t == period) {
                flush();
                continue;
            }
            if (t < 0 || t >= period) continue;
            const std::string name = object_name(t);
            if (!sentence.text.empty()) sentence.text += ' ';
            sentence.text += name;
            sentence.mentioned.insert(name);
            r.generated_objects.insert(name);
        }
        flush();
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<double> first_token_deltas(const std::vector<DecodeState>& states) {
    std::vector<double> out;
    for (const auto& s : states) {
        if (!s.step_diagnostics.empty()) out.push_back(s.step_diagnostics.front().delta);
    }
    return out;
}

std::vector<synth::PopeItem> build_pope_suite(const RunConfig& cfg) {
    if (!cfg.suite_file.empty()) return synth::pope_suite_from_json(read_file(cfg.suite_file));
    const synth::Simulator sim(cfg.sim);
    return synth::make_pope_suite(sim, cfg.n_scenes, cfg.subset, cfg.suite_seed, cfg.hdd.segment_fraction);
}

std::vector<synth::CaptionItem> build_caption_suite(const RunConfig& cfg) {
    const synth::Simulator sim(cfg.sim);
    return synth::make_caption_suite(sim, cfg.n_scenes, cfg.suite_seed, cfg.hdd.segment_fraction);
}

BenchmarkReport run_benchmark(const RunConfig& cfg, LogitProvider& provider) {
    cfg.validate();
    BenchmarkReport report;
    report.cfg = cfg;
    report.provider_identity = provider.identity();

    const synth::Simulator sim(cfg.sim);
    std::vector<synth::PopeItem> pope;
    std::vector<synth::CaptionItem> caption;
    const bool is_pope = cfg.dataset == DatasetKind::pope;
    if (is_pope) {
        pope = build_pope_suite(cfg);
        report.n_items = pope.size();
    } else {
        caption = build_caption_suite(cfg);
        report.n_items = caption.size();
    }
    const auto* pp = is_pope ? &pope : nullptr;
    const auto* cp = is_pope ? nullptr : &caption;

    if (cfg.run_vanilla) report.vanilla = evaluate(cfg, provider, Method::vanilla, cfg.hdd, pp, cp, sim);
    if (cfg.run_hdd) {
        report.hdd = evaluate(cfg, provider, Method::hdd, cfg.hdd, pp, cp, sim);
        const auto deltas = first_token_deltas(report.hdd->states);
        report.delta_histogram = metrics::histogram(deltas);
    }
    for (double alpha : cfg.sweep_alphas) {
        HddConfig h = cfg.hdd;
        h.alpha = alpha;
        const auto states = decode_pope(pope, provider, Method::hdd, h, cfg.workers, cfg.concurrent_fetch,
                                        cfg.sample_seed);
        report.sweep.push_back({alpha, metrics::pope_metrics(pope_outcomes(pope, states))});
    }
    return report;
}

BenchmarkReport run_benchmark(const RunConfig& cfg) {
    cfg.validate();
    ProviderStack stack(cfg, cfg.dataset == DatasetKind::pope ? synth::Task::pope : synth::Task::caption);
    return run_benchmark(cfg, stack.get());
}

std::string summary_text(const BenchmarkReport& r) {
    std::ostringstream os;
    os << "hdd " << kVersion << "\n";
    os << "provider: " << r.provider_identity << "\n";
    os << "dataset: " << to_string(r.cfg.dataset);
    if (r.cfg.dataset == DatasetKind::pope) {
        os << " (" << (r.cfg.suite_file.empty() ? synth::to_string(r.cfg.subset) : r.cfg.suite_file) << ")";
    }
    os << ", items: " << r.n_items << ", strategy: " << to_string(r.cfg.hdd.strategy)
       << ", alpha: " << r.cfg.hdd.alpha << ", beta: " << r.cfg.hdd.beta << "\n\n";

    auto line = [&](const MethodResult& m) {
        char buf[256];
        if (m.pope) {
            std::snprintf(buf, sizeof buf, "%-8s acc %6.2f  prec %6.2f  rec %6.2f  f1 %6.2f%s  yes %6.2f  ms/tok %.3f\n",
                          to_string(m.method), 100 * m.pope->accuracy, 100 * m.pope->precision,
                          100 * m.pope->recall, 100 * m.pope->f1, m.pope->f1_undefined ? "*" : " ",
                          100 * m.pope->yes_ratio, m.latency.ms_per_token_mean);
        } else {
            std::snprintf(buf, sizeof buf, "%-8s CHAIRs %6.2f  CHAIRi %6.2f  recall %6.2f  len %6.2f  ms/tok %.3f\n",
                          to_string(m.method), 100 * m.chair->chair_s, 100 * m.chair->chair_i,
                          100 * m.chair->recall, m.chair->avg_length, m.latency.ms_per_token_mean);
        }
        os << buf;
    };
    if (r.vanilla) line(*r.vanilla);
    if (r.hdd) line(*r.hdd);
    if (r.vanilla && r.hdd && r.vanilla->pope) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "gap      acc %+6.2f\n", 100 * (r.hdd->pope->accuracy - r.vanilla->pope->accuracy));
        os << buf;
    }

    if (r.delta_histogram) {
        const auto& h = *r.delta_histogram;
        os << "\nfirst-token delta histogram (" << h.total << " values)\n";
        const std::size_t bins = h.counts.size() - 1;
        for (std::size_t b = 0; b <= bins; ++b) {
            char label[48];
            if (b < bins) {
                std::snprintf(label, sizeof label, "[%.2f, %.2f)", b * h.bin_width(), (b + 1) * h.bin_width());
            } else {
                std::snprintf(label, sizeof label, "[%.2f, 1.00]", h.upper);
            }
            const auto bar = static_cast<std::size_t>(h.fraction(b) * 50.0 + 0.5);
            char buf[128];
            std::snprintf(buf, sizeof buf, "  %-13s %6zu %5.1f%% ", label, h.counts[b], 100 * h.fraction(b));
            os << buf << std::string(bar, '#') << "\n";
        }
    }

    if (!r.sweep.empty()) {
        os << "\nalpha sweep\n  alpha     acc      f1   yes\n";
        for (const auto& row : r.sweep) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "  %5.2f  %6.2f  %6.2f  %6.2f\n", row.alpha, 100 * row.pope.accuracy,
                          100 * row.pope.f1, 100 * row.pope.yes_ratio);
            os << buf;
        }
    }
    return os.str();
}

void write_report(const BenchmarkReport& r, const std::filesystem::path& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::persistence, "cannot create " + dir.string() + ": " + ec.message());

    json report = {{"format", "hdd-report"},
                   {"version", 1},
                   {"hdd_version", kVersion},
                   {"provider", r.provider_identity},
                   {"config", json::parse(config_to_json(r.cfg))},
                   {"n_items", r.n_items}};
    json methods = json::array();
    std::ostringstream metrics_csv, latency_csv, items_csv;
    if (r.cfg.dataset == DatasetKind::pope) {
        metrics_csv << "method,alpha,accuracy,precision,recall,f1,f1_undefined,yes_ratio,tp,fp,fn,tn\n";
    } else {
        metrics_csv << "method,alpha,chair_s,chair_i,recall,avg_length,macro_chair_s,macro_chair_i,macro_recall\n";
    }
    latency_csv << "method,tokens,ms_per_token_mean,p50,p95\n";
    items_csv << "item,method,generated,first_delta,first_selected,stopped_at_eos\n";

    for (const auto* m : {r.vanilla ? &*r.vanilla : nullptr, r.hdd ? &*r.hdd : nullptr}) {
        if (!m) continue;
        json mj = {{"method", to_string(m->method)}, {"hdd", hdd_to_json(m->hdd)}, {"latency", latency_to_json(m->latency)}};
        const std::string alpha = m->method == Method::hdd ? fmt(m->hdd.alpha, 2) : "";
        if (m->pope) {
            mj["pope"] = pope_to_json(*m->pope);
            const auto& p = *m->pope;
            metrics_csv << to_string(m->method) << ',' << alpha << ',' << fmt(p.accuracy) << ',' << fmt(p.precision)
                        << ',' << fmt(p.recall) << ',' << fmt(p.f1) << ',' << (p.f1_undefined ? 1 : 0) << ','
                        << fmt(p.yes_ratio) << ',' << p.tp << ',' << p.fp << ',' << p.fn << ',' << p.tn << '\n';
        }
        if (m->chair) {
            mj["chair"] = chair_to_json(*m->chair);
            const auto& c = *m->chair;
            metrics_csv << to_string(m->method) << ',' << alpha << ',' << fmt(c.chair_s) << ',' << fmt(c.chair_i)
                        << ',' << fmt(c.recall) << ',' << fmt(c.avg_length) << ',' << fmt(c.macro_chair_s) << ','
                        << fmt(c.macro_chair_i) << ',' << fmt(c.macro_recall) << '\n';
        }
        methods.push_back(std::move(mj));
        latency_csv << to_string(m->method) << ',' << m->latency.tokens << ',' << fmt(m->latency.ms_per_token_mean)
                    << ',' << fmt(m->latency.p50) << ',' << fmt(m->latency.p95) << '\n';
        for (std::size_t i = 0; i < m->states.size(); ++i) {
            const auto& s = m->states[i];
            items_csv << i << ',' << to_string(m->method) << ',' << tokens_string(s.generated) << ',';
            if (m->method == Method::hdd && !s.step_diagnostics.empty()) {
                items_csv << fmt(s.step_diagnostics.front().delta, 9) << ','
                          << to_string(s.step_diagnostics.front().selected);
            } else {
                items_csv << ',';
            }
            items_csv << ',' << (s.stopped_at_eos ? 1 : 0) << '\n';
        }
    }
    report["methods"] = methods;

    std::ostringstream hist_csv;
    hist_csv << "bin_low,bin_high,count,fraction\n";
    if (r.delta_histogram) {
        const auto& h = *r.delta_histogram;
        const std::size_t bins = h.counts.size() - 1;
        json hj = {{"upper", h.upper}, {"counts", h.counts}, {"total", h.total}};
        report["delta_histogram"] = hj;
        for (std::size_t b = 0; b <= bins; ++b) {
            const double lo = b < bins ? b * h.bin_width() : h.upper;
            const double hi = b < bins ? (b + 1) * h.bin_width() : 1.0;
            hist_csv << fmt(lo, 2) << ',' << fmt(hi, 2) << ',' << h.counts[b] << ',' << fmt(h.fraction(b)) << '\n';
        }
    }

    std::ostringstream sweep_csv;
    sweep_csv << "alpha,accuracy,f1,yes_ratio\n";
    json sweep = json::array();
    for (const auto& row : r.sweep) {
        sweep.push_back({{"alpha", row.alpha}, {"pope", pope_to_json(row.pope)}});
        sweep_csv << fmt(row.alpha, 2) << ',' << fmt(row.pope.accuracy) << ',' << fmt(row.pope.f1) << ','
                  << fmt(row.pope.yes_ratio) << '\n';
    }
    report["alpha_sweep"] = sweep;

    write_file(dir / "report.json", report.dump(2) + "\n");
    write_file(dir / "summary.txt", summary_text(r));
    write_file(dir / "metrics.csv", metrics_csv.str());
    write_file(dir / "latency.csv", latency_csv.str());
    write_file(dir / "items.csv", items_csv.str());
    write_file(dir / "delta_histogram.csv", hist_csv.str());
    write_file(dir / "alpha_sweep.csv", sweep_csv.str());
    write_file(dir / "config.json", config_to_json(r.cfg) + "\n");
}

BenchmarkReport record(const RunConfig& cfg, const std::filesystem::path& trace_path) {
    cfg.validate();
    ProviderStack stack(cfg, cfg.dataset == DatasetKind::pope ? synth::Task::pope : synth::Task::caption);
    RecordingProvider recorder(stack.get());
    BenchmarkReport report = run_benchmark(cfg, recorder);
    save_trace(recorder.trace(config_to_json(cfg)), trace_path);
    return report;
}

BenchmarkReport replay(const std::filesystem::path& trace_path, const RunConfig* overrides) {
    TraceFile trace = load_trace(trace_path);
    RunConfig cfg = config_from_json(trace.metadata_json);
    cfg.provider = "replay:" + trace_path.string();
    cfg.fetch_delay_ms = 0.0;
    if (overrides) {
        cfg.output_dir = overrides->output_dir;
        cfg.workers = overrides->workers;
    }
    cfg.validate();
    ReplayProvider provider(std::move(trace));
    return run_benchmark(cfg, provider);
}

ProbeReport probe_inertia(const RunConfig& cfg, LogitProvider& provider) {
    if (cfg.n_scenes <= 0) throw Error(ErrorKind::invalid_input, "n_scenes must be positive");
    const synth::Simulator sim(cfg.sim);
    const int neutral = sim.prior().neutral_context();
    ProbeReport report;
    report.provider_identity = provider.identity();
    for (int i = 0; i < cfg.n_scenes; ++i) {
        const auto index = static_cast<std::uint64_t>(i);
        const synth::SyntheticScene scene = sim.scene(cfg.suite_seed, index);
        ProbeRow row;
        row.scene = index;
        row.object_id = scene.objects.front().object_id;
        row.neutral_context = neutral;
        row.biased_context = sim.prior().most_biased_context(row.object_id);
        const ImageQuad quad = synth::scene_quad(cfg.suite_seed, index, cfg.hdd.segment_fraction);
        auto yes_logit = [&](int context) {
            LogitRequest req;
            req.request_id = next_request_id();
            req.image_ref = quad.blank;
            req.prompt_tokens = synth::pope_prompt({row.object_id, context, true});
            const LogitResponse resp = provider.fetch_logits(req);
            if (resp.logits.size() <= static_cast<std::size_t>(synth::kYes)) {
                throw Error(ErrorKind::protocol, "probe: response too short");
            }
            return resp.logits[synth::kYes];
        };
        row.yes_logit_neutral = yes_logit(row.neutral_context);
        row.yes_logit_biased = yes_logit(row.biased_context);
        if (row.yes_logit_biased > row.yes_logit_neutral) ++report.increased;
        report.rows.push_back(row);
    }
    return report;
}

ProbeReport probe_inertia(const RunConfig& cfg) {
    ProviderStack stack(cfg, synth::Task::pope);
    return probe_inertia(cfg, stack.get());
}

std::string probe_to_json(const ProbeReport& r) {
    json rows = json::array();
    for (const auto& row : r.rows) {
        rows.push_back({{"scene", row.scene},
                        {"object", row.object_id},
                        {"neutral_context", row.neutral_context},
                        {"biased_context", row.biased_context},
                        {"yes_logit_neutral", row.yes_logit_neutral},
                        {"yes_logit_biased", row.yes_logit_biased}});
    }
    json j = {{"format", "hdd-probe"},
              {"version", 1},
              {"provider", r.provider_identity},
              {"scenes", r.rows.size()},
              {"increased", r.increased},
              {"rows", rows}};
    return j.dump(2) + "\n";
}

std::string probe_to_csv(const ProbeReport& r) {
    std::ostringstream os;
    os << "scene,object,neutral_context,biased_context,yes_logit_neutral,yes_logit_biased,difference\n";
    for (const auto& row : r.rows) {
        os << row.scene << ',' << row.object_id << ',' << row.neutral_context << ',' << row.biased_context << ','
           << fmt(row.yes_logit_neutral, 9) << ',' << fmt(row.yes_logit_biased, 9) << ','
           << fmt(row.yes_logit_biased - row.yes_logit_neutral, 9) << '\n';
    }
    return os.str();
}

}  // namespace hdd::runner
