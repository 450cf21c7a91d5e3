#pragma once

#include <span>
#include <utility>

#include "hdd/dist_math.hpp"
#include "hdd/types.hpp"

namespace hdd {

enum class Segment { a, b };

const char* to_string(Segment s) noexcept;

struct StepDiagnostics {
    double div_a = 0.0;  // JSD(segment_a || blank), bits
    double div_b = 0.0;  // JSD(segment_b || blank), bits
    double delta = 0.0;  // |div_a - div_b|
    Segment selected = Segment::a;
    int masked_count = 0;

    bool operator==(const StepDiagnostics&) const = default;
};

struct SegmentDivergences {
    double div_a = 0.0;
    double div_b = 0.0;
};

struct SegmentChoice {
    Segment index = Segment::a;
    double delta = 0.0;
};

struct FusedStep {
    LogitVector fused;
    StepDiagnostics diag;
};

struct MaskedLogits {
    LogitVector logits;
    int masked_count = 0;
};

// Divergence of each segment stream from the blank (language-only) stream.
SegmentDivergences segment_divergences(const ProbVector& p_a, const ProbVector& p_b,
                                       const ProbVector& p_blank);

// The segment further from blank wins; equal divergences select segment_a.
SegmentChoice select_segment(double div_a, double div_b) noexcept;

// image + alpha * (image - blank), elementwise. alpha == 0 returns the
// image logits untouched. A -inf image entry stays -inf; a -inf blank entry
// leaves the image entry unchanged.
LogitVector contrastive_step(std::span<const double> logits_img,
                             std::span<const double> logits_blank, double alpha);

// One HDD step: pick the segment by JSD against blank, contrast the original
// and the selected segment against blank, and mix them with weights
// (1 - delta, delta). masked_count is left at zero; see plausibility_mask.
FusedStep hdd_fuse(std::span<const double> logits_original, std::span<const double> logits_a,
                   std::span<const double> logits_b, std::span<const double> logits_blank,
                   const HddConfig& cfg);

// Sets every token whose original-stream probability is below
// beta * max(p_original) to -inf. The original argmax always survives.
MaskedLogits plausibility_mask(std::span<const double> fused, const ProbVector& p_original,
                               double beta);

// hdd_fuse followed by plausibility_mask against softmax(original, T).
FusedStep hdd_step(std::span<const double> logits_original, std::span<const double> logits_a,
                   std::span<const double> logits_b, std::span<const double> logits_blank,
                   const HddConfig& cfg);

}  // namespace hdd
