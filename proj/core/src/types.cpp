#include "hdd/types.hpp"

#include <cmath>
#include <numeric>

#include "hdd/error.hpp"

namespace hdd {

ProbVector ProbVector::from_values(std::vector<double> values, double tolerance) {
    if (values.empty()) {
        throw Error(ErrorKind::invalid_input, "probability vector is empty");
    }
    for (double v : values) {
        if (!(v >= 0.0 && v <= 1.0)) {
            throw Error(ErrorKind::invalid_input, "probability entry outside [0, 1]");
        }
    }
    const double total = std::accumulate(values.begin(), values.end(), 0.0);
    if (std::abs(total - 1.0) > tolerance) {
        throw Error(ErrorKind::invalid_input,
                    "probability vector sums to " + std::to_string(total) + ", expected 1");
    }
    return ProbVector(std::move(values));
}

const char* to_string(Strategy s) noexcept {
    switch (s) {
        case Strategy::greedy: return "greedy";
        case Strategy::beam: return "beam";
        case Strategy::multinomial: return "multinomial";
    }
    return "unknown";
}

Strategy parse_strategy(const std::string& name) {
    if (name == "greedy") return Strategy::greedy;
    if (name == "beam") return Strategy::beam;
    if (name == "multinomial" || name == "sampling") return Strategy::multinomial;
    throw Error(ErrorKind::invalid_input, "unknown decoding strategy '" + name + "'");
}

void HddConfig::validate() const {
    auto fail = [](const std::string& what) { throw Error(ErrorKind::invalid_input, what); };
    if (!(alpha >= 0.0) || !std::isfinite(alpha)) fail("alpha must be finite and >= 0");
    if (!(beta >= 0.0 && beta <= 1.0)) fail("beta must lie in [0, 1]");
    if (!(segment_fraction > 0.0 && segment_fraction <= 1.0)) fail("segment_fraction must lie in (0, 1]");
    if (!(temperature > 0.0) || !std::isfinite(temperature)) fail("temperature must be finite and > 0");
    if (beam_width < 1) fail("beam_width must be >= 1");
    if (max_new_tokens < 1) fail("max_new_tokens must be >= 1");
}

}  // namespace hdd
