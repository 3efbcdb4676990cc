#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "tomoguard/observation.hpp"
#include "tomoguard/rng.hpp"
#include "tomoguard/topology.hpp"

using namespace tomoguard;
using namespace tomoguard::topology;
using namespace tomoguard::observation;

namespace {

PathDelayVector vec3(double ab, double ac, double bc) {
    PathDelayVector x;
    x.values = {ab, ac, bc};
    x.pair_index = {{"a", "b"}, {"a", "c"}, {"b", "c"}};
    x.role = DelayRole::Observed;
    return x;
}

PathDelayVector random_vector(std::size_t l, std::uint64_t seed, double hi = 10.0) {
    std::vector<NodeId> leaves;
    for (std::size_t i = 1; i <= l; ++i) leaves.push_back("v" + std::to_string(i));
    PathDelayVector x;
    x.pair_index = leaf_pairs(leaves);
    x.role = DelayRole::Observed;
    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<double> d(0.0, hi);
    for (std::size_t i = 0; i < x.pair_index.size(); ++i) x.values.push_back(d(eng));
    return x;
}

}  // namespace

TEST_CASE("positive noise never reduces entries and is seed-deterministic",
          "[observation]") {
    for (std::uint64_t s = 0; s < 100; ++s) {
        auto x = random_vector(4, rng::derive(5, "mono", s));
        auto y = apply_positive_noise(x, {0.1, s});
        auto y2 = apply_positive_noise(x, {0.1, s});
        REQUIRE(y.values.size() == x.values.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            CHECK(y.values[i] >= x.values[i]);
            CHECK(y.values[i] == y2.values[i]);
        }
        CHECK(y.role == DelayRole::Observed);
    }
}

TEST_CASE("zero epsilon noise is the identity", "[observation]") {
    auto x = random_vector(5, 77);
    auto y = apply_positive_noise(x, {0.0, 123});
    CHECK(y.values == x.values);
}

TEST_CASE("noise rejects negative input", "[observation]") {
    auto x = vec3(1.0, -0.5, 2.0);
    CHECK_THROWS_AS(apply_positive_noise(x, {0.1, 0}), NegativeEntry);
    CHECK_THROWS_AS(project_realizable(x), NegativeEntry);
}

TEST_CASE("noise mean matches the rectified-gaussian constant", "[observation]") {
    const double eps = 0.1;
    const std::size_t n = 20000;
    PathDelayVector zero;
    zero.pair_index = {{"a", "b"}};
    zero.values = {0.0};
    double sum = 0.0;
    for (std::uint64_t s = 0; s < n; ++s)
        sum += apply_positive_noise(zero, {eps, rng::derive(31, "mean", s)}).values[0];
    double mean = sum / static_cast<double>(n);
    double want = relu_noise_mean(eps);
    // 3 sigma of the sample mean; Var(max(0,N(0,eps^2))) = eps^2(1/2 - 1/(2pi))
    double sd = eps * std::sqrt(0.5 - 1.0 / (2.0 * std::numbers::pi));
    CHECK(std::abs(mean - want) <= 3.0 * sd / std::sqrt(static_cast<double>(n)));
}

TEST_CASE("projection fixes the (5,3,4) triple to (5,4,4)", "[observation]") {
    auto x = vec3(5.0, 3.0, 4.0);
    auto p = project_realizable(x);
    CHECK(p.values == std::vector<double>{5.0, 4.0, 4.0});
}

TEST_CASE("projection is idempotent on random vectors", "[observation]") {
    for (std::uint64_t s = 0; s < 200; ++s) {
        auto x = random_vector(2 + s % 5, rng::derive(17, "idem", s));
        auto p1 = project_realizable(x);
        auto p2 = project_realizable(p1);
        CHECK(p1.values == p2.values);
        CHECK(is_realizable(p1).realizable);
    }
}

TEST_CASE("projection is the exact identity on realizable vectors", "[observation]") {
    for (std::uint64_t s = 0; s < 100; ++s) {
        auto t = random_tree(2 + s % 5, rng::derive(23, "conserv", s));
        auto x = shared_path_vector(t);
        auto p = project_realizable(x);
        CHECK(p.values == x.values);
        CHECK(p.pair_index == x.pair_index);
    }
}

TEST_CASE("three-point check reports the failing triple", "[observation]") {
    auto bad = vec3(5.0, 3.0, 4.0);
    auto rep = is_realizable(bad);
    CHECK_FALSE(rep.realizable);
    CHECK(rep.triple == std::array<NodeId, 3>{"a", "b", "c"});

    auto good = vec3(5.0, 4.0, 4.0);
    CHECK(is_realizable(good).realizable);
}

TEST_CASE("two-leaf vectors are vacuously realizable", "[observation]") {
    PathDelayVector x;
    x.pair_index = {{"a", "b"}};
    x.values = {42.0};
    CHECK(is_realizable(x).realizable);
}

TEST_CASE("true vectors of random trees are realizable", "[observation]") {
    for (std::uint64_t s = 0; s < 100; ++s) {
        auto t = random_tree(2 + s % 7, rng::derive(29, "real", s));
        CHECK(is_realizable(shared_path_vector(t)).realizable);
    }
}

TEST_CASE("observe composes noise and projection deterministically", "[observation]") {
    auto t = random_tree(5, 91);
    auto x = shared_path_vector(t);
    auto o1 = observe(x, 0.1, 7);
    auto o2 = observe(x, 0.1, 7);
    CHECK(o1.values == o2.values);
    CHECK(is_realizable(o1).realizable);
    CHECK(o1.role == DelayRole::Observed);
}
