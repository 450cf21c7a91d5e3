#include "hdd/dist_math.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "hdd/error.hpp"

namespace hdd {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Largest finite entry. Rejects NaN and +inf.
double finite_max(std::span<const double> logits) {
    double best = kNegInf;
    for (double l : logits) {
        if (std::isnan(l) || l == std::numeric_limits<double>::infinity()) {
            throw Error(ErrorKind::invalid_input, "logit vector contains NaN or +inf");
        }
        best = std::max(best, l);
    }
    if (best == kNegInf) {
        throw Error(ErrorKind::degenerate_distribution, "every logit is masked to -inf");
    }
    return best;
}

void check_softmax_args(std::span<const double> logits, double temperature) {
    if (logits.empty()) {
        throw Error(ErrorKind::invalid_input, "softmax of an empty logit vector");
    }
    if (!(temperature > 0.0) || !std::isfinite(temperature)) {
        throw Error(ErrorKind::invalid_input, "temperature must be finite and > 0");
    }
}

void check_same_length(const ProbVector& p, const ProbVector& q) {
    if (p.size() != q.size()) {
        throw Error(ErrorKind::invalid_input, "distributions have different lengths");
    }
}

// x log2(x / m) with the 0 log 0 = 0 convention.
double weighted_log_ratio(double x, double m) {
    if (x <= kProbabilityFloor) return 0.0;
    return x * std::log2(x / m);
}

}  // namespace

ProbVector softmax(std::span<const double> logits, double temperature) {
    check_softmax_args(logits, temperature);
    const double shift = finite_max(logits);

    std::vector<double> probs(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double e = logits[i] == kNegInf ? 0.0 : std::exp((logits[i] - shift) / temperature);
        probs[i] = e;
        total += e;
    }
    for (double& p : probs) p /= total;
    return ProbVector(std::move(probs));
}

std::vector<double> log_softmax(std::span<const double> logits, double temperature) {
    check_softmax_args(logits, temperature);
    const double shift = finite_max(logits);

    std::vector<double> out(logits.size());
    double total = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = logits[i] == kNegInf ? kNegInf : (logits[i] - shift) / temperature;
        if (out[i] != kNegInf) total += std::exp(out[i]);
    }
    const double log_total = std::log(total);
    for (double& v : out) {
        if (v != kNegInf) v -= log_total;
    }
    return out;
}

double kl_divergence(const ProbVector& p, const ProbVector& q) {
    check_same_length(p, q);
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= kProbabilityFloor) continue;
        if (q[i] <= kProbabilityFloor) return std::numeric_limits<double>::infinity();
        sum += p[i] * std::log2(p[i] / q[i]);
    }
    return std::max(sum, 0.0);
}

double js_divergence(const ProbVector& p, const ProbVector& q) {
    check_same_length(p, q);
    double sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        // Both sums below are commutative in (p_i, q_i), which makes the
        // result exactly symmetric.
        const double m = 0.5 * (p[i] + q[i]);
        if (m <= kProbabilityFloor) continue;
        sum += 0.5 * (weighted_log_ratio(p[i], m) + weighted_log_ratio(q[i], m));
    }
    return std::clamp(sum, 0.0, 1.0);
}

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) {
        throw Error(ErrorKind::invalid_input, "argmax of an empty vector");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) best = i;
    }
    return best;
}

}  // namespace hdd
