#include "hdd/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "hdd/decode.hpp"
#include "hdd/error.hpp"
#include "json.hpp"

namespace hdd::synth {
namespace {

using json = nlohmann::json;

constexpr double kSuppressed = -20.0;
constexpr double kImpossible = -30.0;

std::mt19937_64 seeded_engine(std::initializer_list<std::uint64_t> parts) {
    std::vector<std::uint32_t> words;
    for (std::uint64_t p : parts) {
        words.push_back(static_cast<std::uint32_t>(p));
        words.push_back(static_cast<std::uint32_t>(p >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return std::mt19937_64(seq);
}

// Standard normal draws derived from a 64-bit key (Box-Muller on the
// counter generator), so noise is a pure function of the request.
std::vector<double> gaussian_draws(std::uint64_t key, std::size_t count) {
    CounterRng rng(key);
    std::vector<double> out;
    out.reserve(count);
    while (out.size() < count) {
        const double u1 = 1.0 - rng.uniform();  // (0, 1]
        const double u2 = rng.uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        out.push_back(r * std::cos(2.0 * M_PI * u2));
        if (out.size() < count) out.push_back(r * std::sin(2.0 * M_PI * u2));
    }
    return out;
}

void check_object(const Simulator& sim, int object_id) {
    if (object_id < 0 || object_id >= sim.config().n_objects) {
        throw Error(ErrorKind::invalid_input, "unknown object id " + std::to_string(object_id));
    }
}

void check_context(const Simulator& sim, int context) {
    if (context < 0 || context > sim.config().n_contexts) {
        throw Error(ErrorKind::invalid_input, "unknown context word " + std::to_string(context));
    }
}

std::string fraction_text(double fraction) {
    std::ostringstream os;
    os.precision(17);
    os << fraction;
    return os.str();
}

struct ParsedRef {
    bool blank = false;
    std::uint64_t seed = 0;
    std::uint64_t index = 0;
    enum class View { full, seg_a, seg_b } view = View::full;
    double fraction = 1.0;
};

std::uint64_t parse_u64(const std::string& s, const std::string& ref) {
    std::size_t used = 0;
    std::uint64_t v = 0;
    try {
        v = std::stoull(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (s.empty() || used != s.size()) {
        throw Error(ErrorKind::not_found, "unknown image_ref '" + ref + "'");
    }
    return v;
}

ParsedRef parse_ref(const std::string& ref) {
    ParsedRef out;
    if (ref == "syn/blank") {
        out.blank = true;
        return out;
    }
    std::vector<std::string> parts;
    std::stringstream ss(ref);
    for (std::string part; std::getline(ss, part, '/');) parts.push_back(part);
    if (parts.size() != 4 || parts[0] != "syn") {
        throw Error(ErrorKind::not_found, "unknown image_ref '" + ref + "'");
    }
    out.seed = parse_u64(parts[1], ref);
    out.index = parse_u64(parts[2], ref);
    const std::string& view = parts[3];
    if (view == "full") return out;

    const auto at = view.find('@');
    const std::string name = view.substr(0, at);
    if (at == std::string::npos || (name != "seg_a" && name != "seg_b")) {
        throw Error(ErrorKind::not_found, "unknown image_ref '" + ref + "'");
    }
    out.view = name == "seg_a" ? ParsedRef::View::seg_a : ParsedRef::View::seg_b;
    try {
        out.fraction = std::stod(view.substr(at + 1));
    } catch (const std::exception&) {
        throw Error(ErrorKind::not_found, "unknown image_ref '" + ref + "'");
    }
    if (!(out.fraction > 0.0 && out.fraction <= 1.0)) {
        throw Error(ErrorKind::not_found, "segment fraction out of range in '" + ref + "'");
    }
    return out;
}

}  // namespace

bool SyntheticScene::present(int object_id) const noexcept {
    return area_of(object_id).has_value();
}

std::optional<double> SyntheticScene::area_of(int object_id) const noexcept {
    for (const auto& o : objects) {
        if (o.object_id == object_id) return o.area_fraction;
    }
    return std::nullopt;
}

double SyntheticScene::total_area() const noexcept {
    double total = 0.0;
    for (const auto& o : objects) total += o.area_fraction;
    return total;
}

PriorMatrix::PriorMatrix(int n_objects, int n_contexts, std::vector<double> values)
    : n_objects_(n_objects), n_contexts_(n_contexts), values_(std::move(values)) {
    if (n_objects <= 0 || n_contexts < 0 ||
        values_.size() != static_cast<std::size_t>(n_objects) * static_cast<std::size_t>(n_contexts + 1)) {
        throw Error(ErrorKind::invalid_input, "prior matrix has the wrong shape");
    }
    for (int o = 0; o < n_objects; ++o) {
        if (at(o, neutral_context()) != 0.0) {
            throw Error(ErrorKind::invalid_input, "prior for the neutral context must be zero");
        }
        for (int c = 0; c <= n_contexts; ++c) {
            if (!std::isfinite(at(o, c))) throw Error(ErrorKind::invalid_input, "prior entries must be finite");
        }
    }
}

PriorMatrix PriorMatrix::generate(const SimConfig& cfg) {
    auto rng = seeded_engine({cfg.world_seed, 0x5052494fULL});
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    // A few globally popular objects, plus a handful of strongly
    // co-occurring objects per context word.
    std::vector<double> popularity(cfg.n_objects);
    for (double& g : popularity) g = std::pow(unit(rng), 2.0);

    const int stride = cfg.n_contexts + 1;
    std::vector<double> values(static_cast<std::size_t>(cfg.n_objects) * stride, 0.0);
    std::vector<int> ids(cfg.n_objects);
    std::iota(ids.begin(), ids.end(), 0);
    for (int c = 0; c < cfg.n_contexts; ++c) {
        std::vector<double> affinity(cfg.n_objects);
        for (double& a : affinity) a = 0.15 * unit(rng);
        std::shuffle(ids.begin(), ids.end(), rng);
        const int strong = std::min(5, cfg.n_objects);
        for (int i = 0; i < strong; ++i) affinity[ids[i]] = 0.6 + 0.4 * unit(rng);
        for (int o = 0; o < cfg.n_objects; ++o) {
            values[static_cast<std::size_t>(o) * stride + c] =
                cfg.prior_scale * (0.35 * popularity[o] + affinity[o]);
        }
    }
    return PriorMatrix(cfg.n_objects, cfg.n_contexts, std::move(values));
}

double PriorMatrix::at(int object_id, int context) const {
    if (object_id < 0 || object_id >= n_objects_ || context < 0 || context > n_contexts_) {
        throw Error(ErrorKind::invalid_input, "prior lookup out of range");
    }
    return values_[static_cast<std::size_t>(object_id) * (n_contexts_ + 1) + context];
}

int PriorMatrix::most_biased_context(int object_id) const {
    int best = 0;
    for (int c = 1; c < n_contexts_; ++c) {
        if (at(object_id, c) > at(object_id, best)) best = c;
    }
    return best;
}

const char* to_string(PopeSubset s) noexcept {
    switch (s) {
        case PopeSubset::random: return "random";
        case PopeSubset::popular: return "popular";
        case PopeSubset::adversarial: return "adversarial";
    }
    return "unknown";
}

PopeSubset parse_subset(const std::string& name) {
    if (name == "random") return PopeSubset::random;
    if (name == "popular") return PopeSubset::popular;
    if (name == "adversarial") return PopeSubset::adversarial;
    throw Error(ErrorKind::invalid_input, "unknown POPE subset '" + name + "'");
}

Simulator::Simulator(SimConfig cfg) : cfg_(cfg), prior_(PriorMatrix::generate(cfg_)) {
    if (cfg_.n_objects < 2 || cfg_.n_contexts < 1 || cfg_.min_objects < 1 ||
        cfg_.max_objects < cfg_.min_objects || cfg_.max_objects > cfg_.n_objects ||
        !(cfg_.min_coverage > 0.0 && cfg_.max_coverage <= 1.0 && cfg_.min_coverage <= cfg_.max_coverage) ||
        !(cfg_.noise_sigma >= 0.0)) {
        throw Error(ErrorKind::invalid_input, "invalid simulator configuration");
    }
}

SyntheticScene Simulator::scene(std::uint64_t seed, std::uint64_t index) const {
    auto rng = seeded_engine({cfg_.world_seed, seed, index});
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    SyntheticScene s;
    s.context = std::uniform_int_distribution<int>(0, cfg_.n_contexts - 1)(rng);
    const int k = std::uniform_int_distribution<int>(cfg_.min_objects, cfg_.max_objects)(rng);

    // Objects that co-occur with the context are more likely to be present.
    std::vector<double> weight(cfg_.n_objects);
    for (int o = 0; o < cfg_.n_objects; ++o) {
        weight[o] = std::exp(2.0 * prior_.at(o, s.context) / cfg_.prior_scale);
    }
    std::vector<int> chosen;
    for (int i = 0; i < k; ++i) {
        std::discrete_distribution<int> pick(weight.begin(), weight.end());
        const int o = pick(rng);
        chosen.push_back(o);
        weight[o] = 0.0;
    }

    std::lognormal_distribution<double> size(0.0, 1.0);
    std::vector<double> raw(chosen.size());
    for (double& r : raw) r = size(rng);
    const double coverage = cfg_.min_coverage + (cfg_.max_coverage - cfg_.min_coverage) * unit(rng);
    const double total = std::accumulate(raw.begin(), raw.end(), 0.0);
    for (std::size_t i = 0; i < chosen.size(); ++i) {
        s.objects.push_back({chosen[i], coverage * raw[i] / total});
    }
    std::sort(s.objects.begin(), s.objects.end(), [](const SceneObject& x, const SceneObject& y) {
        if (x.area_fraction != y.area_fraction) return x.area_fraction > y.area_fraction;
        return x.object_id < y.object_id;
    });
    return s;
}

LogitVector Simulator::scene_logits(const SyntheticScene& scene, const SyntheticQuery& query, bool blank,
                                    double noise) const {
    check_object(*this, query.target_object);
    check_context(*this, query.context_prefix);
    const double prior = prior_.at(query.target_object, query.context_prefix);
    if (blank) return {prior, cfg_.no_logit};

    const double visual = cfg_.kappa * scene.area_of(query.target_object).value_or(0.0);
    return {visual + prior + noise, cfg_.no_logit + cfg_.visual_no_bias};
}

LogitVector Simulator::caption_logits(const SyntheticScene& scene, int context, const TokenSequence& prefix,
                                      bool blank, std::span<const double> noise) const {
    check_context(*this, context);
    const TokenId period = caption_period();
    const TokenId eos = caption_eos();

    std::set<TokenId> mentioned;
    int since_period = 0;
    for (TokenId t : prefix) {
        if (t == period) {
            since_period = 0;
        } else if (t >= 0 && t < period) {
            mentioned.insert(t);
            ++since_period;
        }
    }
    const int mentions = static_cast<int>(mentioned.size());

    LogitVector out(static_cast<std::size_t>(caption_vocab()), kImpossible);
    for (int o = 0; o < cfg_.n_objects; ++o) {
        if (mentioned.count(o) != 0) continue;
        const double prior = prior_.at(o, context);
        if (blank) {
            out[o] = prior - cfg_.no_logit;
        } else {
            const double visual = cfg_.kappa * scene.area_of(o).value_or(0.0);
            out[o] = visual + prior + noise[static_cast<std::size_t>(o)] - cfg_.no_logit - cfg_.visual_no_bias;
        }
    }
    // Sentence and caption length behavior does not depend on the image.
    out[period] = since_period >= 2 ? 1.5 : (since_period == 0 ? kImpossible : -1.0);
    out[eos] = mentions == 0 ? kImpossible : -2.5 + 0.8 * mentions + (since_period == 0 ? 1.0 : 0.0);
    return out;
}

std::pair<SyntheticScene, SyntheticScene> segment_scene(const SyntheticScene& scene, double fraction,
                                                        bool renormalize) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw Error(ErrorKind::invalid_input, "segment fraction must lie in (0, 1]");
    }
    SyntheticScene a{{}, scene.context};
    SyntheticScene b{{}, scene.context};
    if (scene.objects.empty()) return {a, b};

    std::vector<SceneObject> sorted = scene.objects;
    std::stable_sort(sorted.begin(), sorted.end(), [](const SceneObject& x, const SceneObject& y) {
        if (x.area_fraction != y.area_fraction) return x.area_fraction > y.area_fraction;
        return x.object_id < y.object_id;
    });
    const auto n = sorted.size();
    // The epsilon keeps e.g. 0.05 * 20 from rounding up to 2.
    auto take = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    take = std::clamp<std::size_t>(take, 1, n);

    a.objects.assign(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(take));
    b.objects.assign(sorted.begin() + static_cast<std::ptrdiff_t>(take), sorted.end());
    if (renormalize) {
        for (SyntheticScene* part : {&a, &b}) {
            const double total = part->total_area();
            if (total <= 0.0) continue;
            for (auto& o : part->objects) o.area_fraction /= total;
        }
    }
    return {a, b};
}

ImageQuad scene_quad(std::uint64_t seed, std::uint64_t index, double fraction) {
    const std::string base = "syn/" + std::to_string(seed) + "/" + std::to_string(index) + "/";
    const std::string f = fraction_text(fraction);
    return {base + "full", base + "seg_a@" + f, base + "seg_b@" + f, "syn/blank", true};
}

TokenSequence pope_prompt(const SyntheticQuery& q) {
    return {kTaskPope, static_cast<TokenId>(q.context_prefix), static_cast<TokenId>(q.target_object)};
}

TokenSequence caption_prompt(int context) { return {kTaskCaption, static_cast<TokenId>(context)}; }

std::vector<int> pick_negatives(const Simulator& sim, const SyntheticScene& scene, PopeSubset subset,
                                int count, std::mt19937_64& rng, const std::vector<int>& frequency) {
    std::vector<int> absent;
    for (int o = 0; o < sim.config().n_objects; ++o) {
        if (!scene.present(o)) absent.push_back(o);
    }
    count = std::min<int>(count, static_cast<int>(absent.size()));

    switch (subset) {
        case PopeSubset::random:
            // Partial Fisher-Yates: every absent object equally likely.
            for (int i = 0; i < count; ++i) {
                std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), absent.size() - 1);
                std::swap(absent[static_cast<std::size_t>(i)], absent[pick(rng)]);
            }
            break;
        case PopeSubset::popular:
            std::stable_sort(absent.begin(), absent.end(), [&](int x, int y) {
                return frequency.at(static_cast<std::size_t>(x)) > frequency.at(static_cast<std::size_t>(y));
            });
            break;
        case PopeSubset::adversarial:
            std::stable_sort(absent.begin(), absent.end(), [&](int x, int y) {
                return sim.prior().at(x, scene.context) > sim.prior().at(y, scene.context);
            });
            break;
    }
    absent.resize(static_cast<std::size_t>(count));
    return absent;
}

std::vector<PopeItem> make_pope_suite(const Simulator& sim, int n_scenes, PopeSubset subset,
                                      std::uint64_t seed, double fraction) {
    if (n_scenes <= 0) throw Error(ErrorKind::invalid_input, "n_scenes must be positive");

    std::vector<SyntheticScene> scenes;
    std::vector<int> frequency(static_cast<std::size_t>(sim.config().n_objects), 0);
    for (int i = 0; i < n_scenes; ++i) {
        scenes.push_back(sim.scene(seed, static_cast<std::uint64_t>(i)));
        for (const auto& o : scenes.back().objects) ++frequency[static_cast<std::size_t>(o.object_id)];
    }

    auto rng = seeded_engine({seed, static_cast<std::uint64_t>(subset), 0x504f5045ULL});
    std::vector<PopeItem> suite;
    for (int i = 0; i < n_scenes; ++i) {
        const auto& scene = scenes[static_cast<std::size_t>(i)];
        const auto index = static_cast<std::uint64_t>(i);
        const ImageQuad quad = scene_quad(seed, index, fraction);

        std::vector<int> positives;
        for (const auto& o : scene.objects) positives.push_back(o.object_id);
        std::shuffle(positives.begin(), positives.end(), rng);
        positives.resize(std::min<std::size_t>(3, positives.size()));
        const std::vector<int> negatives =
            pick_negatives(sim, scene, subset, static_cast<int>(positives.size()), rng, frequency);

        for (std::size_t q = 0; q < positives.size(); ++q) {
            for (const auto& [object, truth] : {std::pair{positives[q], true}, std::pair{negatives[q], false}}) {
                PopeItem item;
                item.quad = quad;
                item.query = {object, scene.context, truth};
                item.scene_index = index;
                item.prompt = pope_prompt(item.query);
                suite.push_back(std::move(item));
            }
        }
    }
    return suite;
}

std::vector<CaptionItem> make_caption_suite(const Simulator& sim, int n_scenes, std::uint64_t seed,
                                            double fraction) {
    if (n_scenes <= 0) throw Error(ErrorKind::invalid_input, "n_scenes must be positive");
    std::vector<CaptionItem> suite;
    for (int i = 0; i < n_scenes; ++i) {
        const auto index = static_cast<std::uint64_t>(i);
        const SyntheticScene scene = sim.scene(seed, index);
        CaptionItem item;
        item.quad = scene_quad(seed, index, fraction);
        item.scene_index = index;
        item.context = scene.context;
        for (const auto& o : scene.objects) item.ground_truth_objects.push_back(o.object_id);
        std::sort(item.ground_truth_objects.begin(), item.ground_truth_objects.end());
        item.prompt = caption_prompt(scene.context);
        suite.push_back(std::move(item));
    }
    return suite;
}

LogitResponse SyntheticProvider::fetch_logits(const LogitRequest& req) {
    const ParsedRef ref = parse_ref(req.image_ref);
    const auto& prompt = req.prompt_tokens;
    const TokenId task = task_ == Task::pope ? kTaskPope : kTaskCaption;
    if (prompt.empty() || prompt[0] != task) {
        throw Error(ErrorKind::invalid_input, "prompt does not match the provider task");
    }

    SyntheticScene scene;
    if (!ref.blank) {
        scene = sim_.scene(ref.seed, ref.index);
        if (ref.view != ParsedRef::View::full) {
            auto parts = segment_scene(scene, ref.fraction, sim_.config().renormalize_segments);
            scene = ref.view == ParsedRef::View::seg_a ? parts.first : parts.second;
        }
    }
    const std::uint64_t noise_key =
        request_key(req.image_ref, req.prompt_tokens, req.prefix_tokens) ^ sim_.config().world_seed;

    LogitResponse resp;
    resp.request_id = req.request_id;
    if (task_ == Task::pope) {
        if (prompt.size() != 3) throw Error(ErrorKind::invalid_input, "POPE prompt must be [task, context, object]");
        resp.vocab_size = kPopeVocab;
        resp.eos_token_id = kPopeEos;
        if (!req.prefix_tokens.empty()) {
            resp.logits = {kSuppressed, kSuppressed, 0.0};
            return resp;
        }
        const SyntheticQuery q{prompt[2], prompt[1], false};
        const double noise = ref.blank ? 0.0 : sim_.config().noise_sigma * gaussian_draws(noise_key, 1)[0];
        resp.logits = sim_.scene_logits(scene, q, ref.blank, noise);
        resp.logits.push_back(kSuppressed);
        return resp;
    }

    if (prompt.size() != 2) throw Error(ErrorKind::invalid_input, "caption prompt must be [task, context]");
    resp.vocab_size = sim_.caption_vocab();
    resp.eos_token_id = sim_.caption_eos();
    std::vector<double> noise(static_cast<std::size_t>(sim_.config().n_objects), 0.0);
    if (!ref.blank) {
        noise = gaussian_draws(noise_key, noise.size());
        for (double& n : noise) n *= sim_.config().noise_sigma;
    }
    resp.logits = sim_.caption_logits(scene, prompt[1], req.prefix_tokens, ref.blank, noise);
    return resp;
}

std::string SyntheticProvider::identity() const {
    std::ostringstream os;
    os << "synthetic(task=" << (task_ == Task::pope ? "pope" : "caption")
       << ", world_seed=" << sim_.config().world_seed << ", kappa=" << sim_.config().kappa
       << ", sigma=" << sim_.config().noise_sigma << ")";
    return os.str();
}

std::string pope_suite_to_json(const std::vector<PopeItem>& suite) {
    json items = json::array();
    for (const auto& it : suite) {
        items.push_back({
            {"scene_index", it.scene_index},
            {"quad", {{"original", it.quad.original}, {"segment_a", it.quad.segment_a},
                      {"segment_b", it.quad.segment_b}, {"blank", it.quad.blank}}},
            {"target_object", it.query.target_object},
            {"context_prefix", it.query.context_prefix},
            {"ground_truth", it.query.ground_truth},
            {"prompt_tokens", it.prompt},
        });
    }
    return json{{"format", "hdd-pope-suite"}, {"version", 1}, {"items", items}}.dump();
}

std::vector<PopeItem> pope_suite_from_json(const std::string& text) {
    std::vector<PopeItem> suite;
    try {
        const json doc = json::parse(text);
        if (doc.value("format", std::string{}) != "hdd-pope-suite" || doc.value("version", 0) != 1) {
            throw Error(ErrorKind::persistence, "not a version-1 hdd-pope-suite document");
        }
        for (const json& j : doc.at("items")) {
            PopeItem it;
            it.scene_index = j.at("scene_index").get<std::uint64_t>();
            const json& q = j.at("quad");
            it.quad = {q.at("original").get<std::string>(), q.at("segment_a").get<std::string>(),
                       q.at("segment_b").get<std::string>(), q.at("blank").get<std::string>(), true};
            it.query = {j.at("target_object").get<int>(), j.at("context_prefix").get<int>(),
                        j.at("ground_truth").get<bool>()};
            it.prompt = j.at("prompt_tokens").get<TokenSequence>();
            suite.push_back(std::move(it));
        }
    } catch (const json::exception& e) {
        throw Error(ErrorKind::persistence, std::string("malformed suite file: ") + e.what());
    }
    return suite;
}

}  // namespace hdd::synth
