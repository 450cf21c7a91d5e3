#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace hdd {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

// Raw next-token scores. Entries are finite except where the plausibility
// constraint has masked a token to -infinity.
using LogitVector = std::vector<double>;

// A normalized next-token distribution. Only constructible through softmax
// or through from_values(), which validates the simplex constraints.
class ProbVector {
public:
    ProbVector() = default;

    static ProbVector from_values(std::vector<double> values, double tolerance = 1e-9);

    std::span<const double> values() const noexcept { return probs_; }
    std::size_t size() const noexcept { return probs_.size(); }
    double operator[](std::size_t i) const { return probs_[i]; }
    bool empty() const noexcept { return probs_.empty(); }

private:
    friend ProbVector softmax(std::span<const double> logits, double temperature);
    explicit ProbVector(std::vector<double> probs) : probs_(std::move(probs)) {}

    std::vector<double> probs_;
};

// Handles for the four conditioned inputs of one HDD step. The engine never
// inspects pixels; segment_a/segment_b are complementary partitions of the
// original that the provider knows how to resolve.
struct ImageQuad {
    std::string original;
    std::string segment_a;
    std::string segment_b;
    std::string blank;
    bool segments_complementary = true;

    bool operator==(const ImageQuad&) const = default;
};

enum class Strategy { greedy, beam, multinomial };

const char* to_string(Strategy s) noexcept;
Strategy parse_strategy(const std::string& name);

struct HddConfig {
    double alpha = 0.6;
    double beta = 0.1;
    double segment_fraction = 0.05;
    double temperature = 1.0;
    Strategy strategy = Strategy::greedy;
    int beam_width = 2;
    int max_new_tokens = 64;

    // Throws Error(invalid_input) naming the first offending field.
    void validate() const;
};

}  // namespace hdd
