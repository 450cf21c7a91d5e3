#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "hdd/provider.hpp"
#include "hdd/types.hpp"

// A synthetic vision-language model. Visual evidence for an object grows
// linearly with its area fraction; a context word adds a co-occurrence bias
// that is present with or without the image. A blank image keeps only that
// bias, which is what the engine contrasts against.
namespace hdd::synth {

struct SimConfig {
    int n_objects = 40;
    int n_contexts = 8;          // context words 0..n_contexts-1; n_contexts is neutral
    double kappa = 5.0;          // visual sensitivity per unit area fraction
    double noise_sigma = 0.25;   // Gaussian noise on image-conditioned logits
    double no_logit = 0.75;      // "no" logit with a blank image
    double visual_no_bias = 1.0; // extra "no" evidence an image adds over blank
    double prior_scale = 1.5;    // scale of the co-occurrence prior
    int min_objects = 2;
    int max_objects = 6;
    double min_coverage = 0.55;  // total area covered by objects
    double max_coverage = 0.95;
    bool renormalize_segments = true;
    std::uint64_t world_seed = 20250117;
};

struct SceneObject {
    int object_id = 0;
    double area_fraction = 0.0;

    bool operator==(const SceneObject&) const = default;
};

struct SyntheticScene {
    std::vector<SceneObject> objects;  // exactly the present objects
    int context = 0;                   // scene context word

    bool present(int object_id) const noexcept;
    std::optional<double> area_of(int object_id) const noexcept;
    double total_area() const noexcept;
    bool operator==(const SyntheticScene&) const = default;
};

// Object x context-word co-occurrence biases. The neutral context column is
// identically zero.
class PriorMatrix {
public:
    PriorMatrix() = default;
    PriorMatrix(int n_objects, int n_contexts, std::vector<double> values);

    static PriorMatrix generate(const SimConfig& cfg);

    double at(int object_id, int context) const;
    int n_objects() const noexcept { return n_objects_; }
    int n_contexts() const noexcept { return n_contexts_; }
    int neutral_context() const noexcept { return n_contexts_; }

    // Context word under which object_id has the largest prior.
    int most_biased_context(int object_id) const;

private:
    int n_objects_ = 0;
    int n_contexts_ = 0;
    std::vector<double> values_;  // n_objects x (n_contexts + 1)
};

struct SyntheticQuery {
    int target_object = 0;
    int context_prefix = 0;
    bool ground_truth = false;
};

enum class PopeSubset { random, popular, adversarial };

const char* to_string(PopeSubset s) noexcept;
PopeSubset parse_subset(const std::string& name);

// Token layout of the POPE-style answer vocabulary.
inline constexpr TokenId kYes = 0;
inline constexpr TokenId kNo = 1;
inline constexpr TokenId kPopeEos = 2;
inline constexpr std::int64_t kPopeVocab = 3;

// First prompt token selects the task.
inline constexpr TokenId kTaskPope = 0;
inline constexpr TokenId kTaskCaption = 1;

class Simulator {
public:
    explicit Simulator(SimConfig cfg = {});

    const SimConfig& config() const noexcept { return cfg_; }
    const PriorMatrix& prior() const noexcept { return prior_; }

    // Scene `index` of the scene stream identified by `seed`. Pure.
    SyntheticScene scene(std::uint64_t seed, std::uint64_t index) const;

    // [yes, no] logits. The visual term kappa * area * [present] and the
    // image "no" bias apply only when blank is false; `noise` is added to the
    // yes-logit of image-conditioned calls.
    LogitVector scene_logits(const SyntheticScene& scene, const SyntheticQuery& query, bool blank,
                             double noise = 0.0) const;

    // Caption vocabulary: objects 0..n-1, then sentence break, then EOS.
    TokenId caption_period() const noexcept { return static_cast<TokenId>(cfg_.n_objects); }
    TokenId caption_eos() const noexcept { return static_cast<TokenId>(cfg_.n_objects + 1); }
    std::int64_t caption_vocab() const noexcept { return cfg_.n_objects + 2; }

    // Next-token logits of a caption given the generated prefix. `noise`
    // supplies one draw per object.
    LogitVector caption_logits(const SyntheticScene& scene, int context, const TokenSequence& prefix,
                               bool blank, std::span<const double> noise) const;

private:
    SimConfig cfg_;
    PriorMatrix prior_;
};

// Splits a scene into the ceil(fraction * n) largest-area objects and the
// rest. With renormalize, areas are rescaled to each part's total.
std::pair<SyntheticScene, SyntheticScene> segment_scene(const SyntheticScene& scene, double fraction,
                                                        bool renormalize = true);

// Image reference grammar understood by SyntheticProvider:
//   syn/blank
//   syn/<seed>/<index>/full
//   syn/<seed>/<index>/seg_a@<fraction>   syn/<seed>/<index>/seg_b@<fraction>
ImageQuad scene_quad(std::uint64_t seed, std::uint64_t index, double fraction);

struct PopeItem {
    ImageQuad quad;
    SyntheticQuery query;
    std::uint64_t scene_index = 0;
    TokenSequence prompt;
};

struct CaptionItem {
    ImageQuad quad;
    std::uint64_t scene_index = 0;
    int context = 0;
    std::vector<int> ground_truth_objects;
    TokenSequence prompt;
};

TokenSequence pope_prompt(const SyntheticQuery& q);
TokenSequence caption_prompt(int context);

// Picks `count` distinct absent objects for a scene. random: uniform over
// the absent vocabulary; popular: the most frequent absent objects by
// `frequency`; adversarial: the absent objects with the largest prior under
// the scene context.
std::vector<int> pick_negatives(const Simulator& sim, const SyntheticScene& scene, PopeSubset subset,
                                int count, std::mt19937_64& rng, const std::vector<int>& frequency);

// Balanced yes/no queries: up to three present objects per scene and as many
// absent ones chosen per the subset rule. Deterministic in `seed`.
std::vector<PopeItem> make_pope_suite(const Simulator& sim, int n_scenes, PopeSubset subset,
                                      std::uint64_t seed, double fraction = 0.05);

std::vector<CaptionItem> make_caption_suite(const Simulator& sim, int n_scenes, std::uint64_t seed,
                                            double fraction = 0.05);

enum class Task { pope, caption };

// The simulator behind the provider interface. Noise is a pure function of
// the request content, so identical requests get identical logits.
class SyntheticProvider final : public LogitProvider {
public:
    SyntheticProvider(const Simulator& sim, Task task) : sim_(sim), task_(task) {}

    LogitResponse fetch_logits(const LogitRequest& req) override;
    std::string identity() const override;

private:
    const Simulator& sim_;
    Task task_;
};

// Suite files (JSON) so a run can be reproduced from data alone.
std::string pope_suite_to_json(const std::vector<PopeItem>& suite);
std::vector<PopeItem> pope_suite_from_json(const std::string& text);

}  // namespace hdd::synth
