#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "hdd/decode.hpp"
#include "hdd/dist_math.hpp"
#include "hdd/fusion.hpp"
#include "hdd/synth.hpp"

using namespace hdd;

namespace {

std::vector<double> gauss(std::mt19937_64& rng, std::size_t n) {
    std::normal_distribution<double> g(0.0, 2.0);
    std::vector<double> v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

void BM_Softmax(benchmark::State& state) {
    std::mt19937_64 rng(1);
    const auto v = gauss(rng, static_cast<std::size_t>(state.range(0)));
    for (auto _ : state) benchmark::DoNotOptimize(softmax(v));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Softmax)->RangeMultiplier(8)->Range(8, 32768);

void BM_Jsd(benchmark::State& state) {
    std::mt19937_64 rng(2);
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto p = softmax(gauss(rng, n)), q = softmax(gauss(rng, n));
    for (auto _ : state) benchmark::DoNotOptimize(js_divergence(p, q));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Jsd)->RangeMultiplier(8)->Range(8, 32768);

// One full fusion step (fuse + mask) at typical LVLM vocabulary sizes.
void BM_HddStep(benchmark::State& state) {
    std::mt19937_64 rng(3);
    const auto n = static_cast<std::size_t>(state.range(0));
    const auto v = gauss(rng, n), a = gauss(rng, n), b = gauss(rng, n), bl = gauss(rng, n);
    const HddConfig cfg;
    for (auto _ : state) benchmark::DoNotOptimize(hdd_step(v, a, b, bl, cfg));
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_HddStep)->Arg(3)->Arg(42)->Arg(32000)->Arg(152064);

void BM_DecodePope(benchmark::State& state) {
    const synth::Simulator sim;
    synth::SyntheticProvider provider(sim, synth::Task::pope);
    const auto items = synth::make_pope_suite(sim, 20, synth::PopeSubset::adversarial, 7);
    HddConfig cfg;
    DecodeOptions opts;
    opts.concurrent_fetch = state.range(0) != 0;
    std::size_t i = 0;
    for (auto _ : state) {
        const auto& item = items[i++ % items.size()];
        benchmark::DoNotOptimize(decode(item.quad, item.prompt, cfg, provider, opts));
    }
}
BENCHMARK(BM_DecodePope)->Arg(0)->Arg(1);

void BM_DecodeCaptionBeam(benchmark::State& state) {
    const synth::Simulator sim;
    synth::SyntheticProvider provider(sim, synth::Task::caption);
    const auto items = synth::make_caption_suite(sim, 10, 7);
    HddConfig cfg;
    cfg.strategy = Strategy::beam;
    cfg.beam_width = static_cast<int>(state.range(0));
    cfg.max_new_tokens = 32;
    DecodeOptions opts;
    opts.concurrent_fetch = false;
    std::size_t i = 0;
    for (auto _ : state) {
        const auto& item = items[i++ % items.size()];
        benchmark::DoNotOptimize(decode(item.quad, item.prompt, cfg, provider, opts));
    }
}
BENCHMARK(BM_DecodeCaptionBeam)->Arg(1)->Arg(3);

}  // namespace

BENCHMARK_MAIN();
