#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "hdd/dist_math.hpp"
#include "hdd/error.hpp"
#include "../support/oracle.hpp"

using namespace hdd;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

ProbVector probs(std::vector<double> v) { return ProbVector::from_values(std::move(v)); }

std::vector<double> random_logits(std::mt19937_64& rng, std::size_t n, double scale) {
    std::normal_distribution<double> g(0.0, scale);
    std::vector<double> v(n);
    for (auto& x : v) x = g(rng);
    return v;
}

}  // namespace

TEST_CASE("softmax of equal logits is uniform") {
    const auto p = softmax(std::vector<double>{0, 0, 0});
    for (double x : p.values()) CHECK(x == doctest::Approx(1.0 / 3).epsilon(1e-15));
}

TEST_CASE("softmax of [ln 2, 0] is [2/3, 1/3]") {
    const auto p = softmax(std::vector<double>{std::log(2.0), 0.0});
    CHECK(std::fabs(p[0] - 2.0 / 3) < 1e-15);
    CHECK(std::fabs(p[1] - 1.0 / 3) < 1e-15);
}

TEST_CASE("softmax survives large logits") {
    const auto p = softmax(std::vector<double>{1000, 0});
    CHECK(p[0] == 1.0);
    CHECK(p[1] < 1e-300);
}

TEST_CASE("softmax temperature flattens and sharpens") {
    const std::vector<double> l{2, 1, 0};
    const auto hot = softmax(l, 10.0);
    const auto cold = softmax(l, 0.1);
    CHECK(hot[0] < softmax(l, 1.0)[0]);
    CHECK(cold[0] > 0.9999);
}

TEST_CASE("softmax maps -inf to exactly zero") {
    const auto p = softmax(std::vector<double>{1.0, -kInf, 1.0});
    CHECK(p[1] == 0.0);
    CHECK(p[0] == doctest::Approx(0.5));
}

TEST_CASE("softmax rejects bad input") {
    CHECK_THROWS_AS(softmax(std::vector<double>{}), Error);
    CHECK_THROWS_AS(softmax(std::vector<double>{1.0, std::nan("")}), Error);
    CHECK_THROWS_AS(softmax(std::vector<double>{1.0, kInf}), Error);
    CHECK_THROWS_AS(softmax(std::vector<double>{1.0}, 0.0), Error);
    try {
        softmax(std::vector<double>{-kInf, -kInf});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::degenerate_distribution);
    }
}

TEST_CASE("log_softmax agrees with log of softmax") {
    std::mt19937_64 rng(3);
    for (int i = 0; i < 200; ++i) {
        const auto l = random_logits(rng, 7, 5.0);
        const auto lp = log_softmax(l, 0.7);
        const auto p = softmax(l, 0.7);
        for (std::size_t k = 0; k < l.size(); ++k) CHECK(std::fabs(std::exp(lp[k]) - p[k]) < 1e-12);
    }
    const auto lp = log_softmax(std::vector<double>{0.0, -kInf});
    CHECK(lp[0] == 0.0);
    CHECK(lp[1] == -kInf);
}

TEST_CASE("ProbVector validation") {
    CHECK_NOTHROW(probs({0.25, 0.75}));
    CHECK_THROWS_AS(probs({0.5, 0.6}), Error);
    CHECK_THROWS_AS(probs({-0.1, 1.1}), Error);
    CHECK_THROWS_AS(probs({}), Error);
    CHECK_THROWS_AS(probs({std::nan(""), 1.0}), Error);
}

TEST_CASE("kl divergence examples") {
    const auto u = probs({0.25, 0.25, 0.25, 0.25});
    CHECK(kl_divergence(u, u) == 0.0);
    CHECK(kl_divergence(probs({1, 0}), probs({0.5, 0.5})) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(kl_divergence(probs({1, 0}), probs({0, 1})) == kInf);
    CHECK_THROWS_AS(kl_divergence(probs({1, 0}), probs({1, 0, 0})), Error);
}

TEST_CASE("js divergence examples") {
    CHECK(js_divergence(probs({0.2, 0.8}), probs({0.2, 0.8})) == 0.0);
    CHECK(js_divergence(probs({1, 0}), probs({0, 1})) == doctest::Approx(1.0).epsilon(1e-15));

    const double expected = static_cast<double>(oracle::jsd({0.5L, 0.5L}, {1.0L, 0.0L}));
    const double got = js_divergence(probs({0.5, 0.5}), probs({1, 0}));
    CHECK(std::fabs(got - expected) < 1e-12);
    CHECK(std::fabs(got - 0.3113) < 5e-5);
}

TEST_CASE("js divergence properties over random pairs") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> len(2, 40);
    for (int i = 0; i < 2000; ++i) {
        const std::size_t n = len(rng);
        const double scale = i % 3 == 0 ? 20.0 : 2.0;
        const auto p = softmax(random_logits(rng, n, scale));
        const auto q = softmax(random_logits(rng, n, scale));
        const double pq = js_divergence(p, q);
        CHECK(pq == js_divergence(q, p));
        CHECK(pq >= 0.0);
        CHECK(pq <= 1.0);
        CHECK(js_divergence(p, p) == 0.0);
        const double ref = static_cast<double>(
            oracle::jsd(oracle::Vec(p.values().begin(), p.values().end()),
                        oracle::Vec(q.values().begin(), q.values().end())));
        CHECK(std::fabs(pq - ref) < 1e-12);
    }
}

TEST_CASE("softmax is shift invariant") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> shift(-1e4, 1e4);
    for (int i = 0; i < 500; ++i) {
        const auto l = random_logits(rng, 9, 3.0);
        auto shifted = l;
        const double c = shift(rng);
        for (auto& x : shifted) x += c;
        const auto a = softmax(l), b = softmax(shifted);
        for (std::size_t k = 0; k < l.size(); ++k) CHECK(std::fabs(a[k] - b[k]) < 1e-12);
    }
}

TEST_CASE("argmax picks the lowest index on ties") {
    CHECK(argmax(std::vector<double>{1, 3, 3, 2}) == 1);
    CHECK(argmax(std::vector<double>{-kInf, -kInf, 0}) == 2);
    CHECK_THROWS_AS(argmax(std::vector<double>{}), Error);
}
