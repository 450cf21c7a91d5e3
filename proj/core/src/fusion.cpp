#include "hdd/fusion.hpp"

#include <cmath>
#include <limits>

#include "hdd/error.hpp"

namespace hdd {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// (1 - w) * x + w * y without producing 0 * inf at the endpoints.
LogitVector convex_mix(const LogitVector& x, const LogitVector& y, double w) {
    if (w == 0.0) return x;
    if (w == 1.0) return y;
    LogitVector out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        out[i] = (1.0 - w) * x[i] + w * y[i];
    }
    return out;
}

}  // namespace

const char* to_string(Segment s) noexcept { return s == Segment::a ? "segment_a" : "segment_b"; }

SegmentDivergences segment_divergences(const ProbVector& p_a, const ProbVector& p_b,
                                       const ProbVector& p_blank) {
    return {js_divergence(p_a, p_blank), js_divergence(p_b, p_blank)};
}

SegmentChoice select_segment(double div_a, double div_b) noexcept {
    return {div_b > div_a ? Segment::b : Segment::a, std::abs(div_a - div_b)};
}

LogitVector contrastive_step(std::span<const double> logits_img,
                             std::span<const double> logits_blank, double alpha) {
    if (logits_img.size() != logits_blank.size()) {
        throw Error(ErrorKind::invalid_input, "contrastive_step: length mismatch");
    }
    LogitVector out(logits_img.begin(), logits_img.end());
    if (alpha == 0.0) return out;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (out[i] == kNegInf || logits_blank[i] == kNegInf) continue;
        out[i] = logits_img[i] + alpha * (logits_img[i] - logits_blank[i]);
    }
    return out;
}

FusedStep hdd_fuse(std::span<const double> logits_original, std::span<const double> logits_a,
                   std::span<const double> logits_b, std::span<const double> logits_blank,
                   const HddConfig& cfg) {
    const std::size_t n = logits_original.size();
    if (logits_a.size() != n || logits_b.size() != n || logits_blank.size() != n) {
        throw Error(ErrorKind::invalid_input, "hdd_fuse: streams have different lengths");
    }
    cfg.validate();

    // The original stream only needs to be a valid distribution here; its
    // probabilities drive the plausibility mask.
    (void)softmax(logits_original, cfg.temperature);
    const ProbVector p_a = softmax(logits_a, cfg.temperature);
    const ProbVector p_b = softmax(logits_b, cfg.temperature);
    const ProbVector p_blank = softmax(logits_blank, cfg.temperature);

    const SegmentDivergences divs = segment_divergences(p_a, p_b, p_blank);
    const SegmentChoice choice = select_segment(divs.div_a, divs.div_b);
    const auto& logits_selected = choice.index == Segment::a ? logits_a : logits_b;

    FusedStep step;
    const LogitVector contrasted_original = contrastive_step(logits_original, logits_blank, cfg.alpha);
    if (choice.delta == 0.0) {
        step.fused = contrasted_original;
    } else {
        step.fused = convex_mix(contrasted_original,
                                contrastive_step(logits_selected, logits_blank, cfg.alpha),
                                choice.delta);
    }
    step.diag = {divs.div_a, divs.div_b, choice.delta, choice.index, 0};
    return step;
}

MaskedLogits plausibility_mask(std::span<const double> fused, const ProbVector& p_original,
                               double beta) {
    if (fused.size() != p_original.size()) {
        throw Error(ErrorKind::invalid_input, "plausibility_mask: length mismatch");
    }
    if (!(beta >= 0.0 && beta <= 1.0)) {
        throw Error(ErrorKind::invalid_input, "plausibility_mask: beta must lie in [0, 1]");
    }
    const double threshold = beta * p_original[argmax(p_original.values())];

    MaskedLogits out{LogitVector(fused.begin(), fused.end()), 0};
    for (std::size_t i = 0; i < out.logits.size(); ++i) {
        if (p_original[i] < threshold) {
            out.logits[i] = kNegInf;
            ++out.masked_count;
        }
    }
    return out;
}

FusedStep hdd_step(std::span<const double> logits_original, std::span<const double> logits_a,
                   std::span<const double> logits_b, std::span<const double> logits_blank,
                   const HddConfig& cfg) {
    FusedStep step = hdd_fuse(logits_original, logits_a, logits_b, logits_blank, cfg);
    MaskedLogits masked =
        plausibility_mask(step.fused, softmax(logits_original, cfg.temperature), cfg.beta);
    step.fused = std::move(masked.logits);
    step.diag.masked_count = masked.masked_count;
    return step;
}

}  // namespace hdd
