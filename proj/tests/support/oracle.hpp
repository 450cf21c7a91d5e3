#pragma once

// Straight-line reference implementations used as test oracles. They share
// no code with the engine and compute in long double.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

namespace oracle {

using Vec = std::vector<long double>;

inline Vec to_ld(const std::vector<double>& v) { return Vec(v.begin(), v.end()); }

inline Vec softmax(const Vec& logits, long double temperature = 1.0L) {
    long double m = -std::numeric_limits<long double>::infinity();
    for (auto x : logits) m = std::max(m, x / temperature);
    Vec out(logits.size());
    long double z = 0.0L;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        out[i] = std::isinf(logits[i]) ? 0.0L : std::exp(logits[i] / temperature - m);
        z += out[i];
    }
    for (auto& x : out) x /= z;
    return out;
}

// Textbook definition: 0.5 KL(p||m) + 0.5 KL(q||m), m = (p+q)/2, base 2.
inline long double jsd(const Vec& p, const Vec& q) {
    long double kl_pm = 0.0L, kl_qm = 0.0L;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const long double m = 0.5L * (p[i] + q[i]);
        if (p[i] > 0) kl_pm += p[i] * std::log2(p[i] / m);
        if (q[i] > 0) kl_qm += q[i] * std::log2(q[i] / m);
    }
    return 0.5L * kl_pm + 0.5L * kl_qm;
}

struct Fused {
    Vec logits;  // after the plausibility mask; masked entries are -inf
    long double div_a = 0, div_b = 0, delta = 0;
    bool selected_b = false;
};

// One HDD step, written from the formulas:
//   Div_i = JSD(p(v_i) || p(blank)), i* = argmax Div_i (ties -> a),
//   delta = |Div_a - Div_b|,
//   c(x) = (1 + alpha) x - alpha blank,
//   fused = (1 - delta) c(V) + delta c(v_i*),
//   tokens with p(V) < beta max p(V) are removed.
inline Fused hdd_step(const Vec& v, const Vec& a, const Vec& b, const Vec& blank, long double alpha,
                      long double beta, long double temperature) {
    Fused r;
    const Vec pa = softmax(a, temperature), pb = softmax(b, temperature), pn = softmax(blank, temperature);
    r.div_a = jsd(pa, pn);
    r.div_b = jsd(pb, pn);
    r.selected_b = r.div_b > r.div_a;
    r.delta = std::fabs(r.div_a - r.div_b);
    const Vec& seg = r.selected_b ? b : a;
    const Vec pv = softmax(v, temperature);
    const long double pmax = *std::max_element(pv.begin(), pv.end());
    r.logits.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        const long double cv = (1 + alpha) * v[i] - alpha * blank[i];
        const long double cs = (1 + alpha) * seg[i] - alpha * blank[i];
        r.logits[i] = (1 - r.delta) * cv + r.delta * cs;
        if (pv[i] < beta * pmax) r.logits[i] = -std::numeric_limits<long double>::infinity();
    }
    return r;
}

// Best complete path of a trellis by exhaustive enumeration. `logp(prefix)`
// returns next-token log-probabilities; a path ends at `eos` or after
// `max_len` tokens. Returns the best path and its score.
inline std::pair<std::vector<int>, long double> best_path(
    const std::function<Vec(const std::vector<int>&)>& logp, int eos, int max_len) {
    std::vector<int> best;
    long double best_score = -std::numeric_limits<long double>::infinity();
    std::function<void(std::vector<int>&, long double)> walk = [&](std::vector<int>& prefix, long double score) {
        if (!prefix.empty() && (prefix.back() == eos || static_cast<int>(prefix.size()) == max_len)) {
            if (score > best_score) {
                best_score = score;
                best = prefix;
            }
            return;
        }
        const Vec lp = logp(prefix);
        for (std::size_t t = 0; t < lp.size(); ++t) {
            if (std::isinf(lp[t])) continue;
            prefix.push_back(static_cast<int>(t));
            walk(prefix, score + lp[t]);
            prefix.pop_back();
        }
    };
    std::vector<int> start;
    walk(start, 0.0L);
    return {best, best_score};
}

}  // namespace oracle
