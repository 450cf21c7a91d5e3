#pragma once

#include <span>
#include <vector>

#include "hdd/types.hpp"

// Probability-vector primitives. All divergences are reported in bits so the
// Jensen-Shannon divergence lies in [0, 1].
namespace hdd {

// Probabilities below this are treated as zero inside divergence sums.
inline constexpr double kProbabilityFloor = 1e-300;

// exp((l_i - max l) / T) / sum. Entries at -infinity map to probability 0.
// Throws invalid_input for empty input or T <= 0, degenerate_distribution if
// every entry is -infinity.
ProbVector softmax(std::span<const double> logits, double temperature = 1.0);

// Natural-log probabilities of softmax(logits / T); masked entries stay -inf.
std::vector<double> log_softmax(std::span<const double> logits, double temperature = 1.0);

// sum p_i log2(p_i / q_i); +infinity when p puts mass where q has none.
double kl_divergence(const ProbVector& p, const ProbVector& q);

// 0.5 KL(p || m) + 0.5 KL(q || m), m = (p + q) / 2, in bits. Evaluated so that
// js_divergence(p, q) and js_divergence(q, p) are bit-identical.
double js_divergence(const ProbVector& p, const ProbVector& q);

// Index of the largest entry; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);

}  // namespace hdd
