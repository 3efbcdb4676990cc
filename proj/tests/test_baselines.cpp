#include <catch_amalgamated.hpp>

#include <cmath>

#include "tomoguard/attackers.hpp"
#include "tomoguard/baselines.hpp"
#include "tomoguard/observation.hpp"
#include "tomoguard/rng.hpp"
#include "tomoguard/topology.hpp"

using namespace tomoguard;
using namespace tomoguard::topology;
using namespace tomoguard::baselines;

TEST_CASE("proto fakes are realizable, reproducible and leaf-preserving", "[baselines]") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto t = random_tree(3 + seed % 4, rng::derive(800, "net", seed));
        BaselineConfig cfg;
        cfg.rng_seed = seed;
        auto res = proto_defense(t, cfg);
        CHECK(res.xt.role == DelayRole::Perturbed);
        CHECK(observation::is_realizable(res.xt).realizable);
        CHECK(res.fake.leaves() == t.leaves());
        CHECK(observation::leaf_labels(res.xt) == t.leaves());
        for (double v : res.xt.values) {
            CHECK(v >= 0.0);
            if (v > 0.0) CHECK(v >= 100.0);  // fresh delays live in [100, 500]
        }
        auto again = proto_defense(t, cfg);
        CHECK(again.xt.values == res.xt.values);
        CHECK(canonical_form(again.fake) == canonical_form(res.fake));
    }
}

TEST_CASE("proto rarely reproduces the true topology by chance", "[baselines]") {
    auto t = random_tree(5, 42);
    auto truth = canonical_form(t);
    int collisions = 0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        BaselineConfig cfg;
        cfg.rng_seed = seed;
        if (canonical_form(proto_defense(t, cfg).fake) == truth) ++collisions;
    }
    // 236 rooted shapes at l=5: 100 uniform-ish draws should almost never hit.
    CHECK(collisions <= 5);
}

TEST_CASE("antitomo with one candidate is proto with refitted delays", "[baselines]") {
    auto t = random_tree(4, 7);
    BaselineConfig cfg;
    cfg.candidate_count = 1;
    cfg.rng_seed = 3;
    auto res = antitomo_defense(t, cfg);
    CHECK(canonical_form(res.fake) != canonical_form(t));
    // The published vector is the candidate's least-squares fit toward X.
    auto x = shared_path_vector(t);
    CHECK(res.cost == Catch::Approx(attackers::path_loss(x, res.fake)).margin(1e-9));
    CHECK(observation::is_realizable(res.xt).realizable);
}

TEST_CASE("antitomo cost never rises with more candidates", "[baselines]") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto t = random_tree(4 + seed % 2, rng::derive(810, "net", seed));
        BaselineConfig c1{1, seed}, c8{8, seed}, c64{64, seed};
        double a = antitomo_defense(t, c1).cost;
        double b = antitomo_defense(t, c8).cost;
        double c = antitomo_defense(t, c64).cost;
        CHECK(b <= a + 1e-12);
        CHECK(c <= b + 1e-12);
    }
}

TEST_CASE("antitomo stays cheaper than proto on paired seeds", "[baselines]") {
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        auto t = random_tree(4 + seed % 3, rng::derive(820, "net", seed));
        BaselineConfig cfg;
        cfg.rng_seed = seed;
        cfg.candidate_count = 64;
        double anti = antitomo_defense(t, cfg).cost;
        double proto = proto_defense(t, cfg).cost;
        CHECK(anti <= proto);
    }
}

TEST_CASE("antitomo never publishes the true shape", "[baselines]") {
    auto t = random_tree(4, 11);
    auto truth = canonical_form(t);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        BaselineConfig cfg;
        cfg.rng_seed = seed;
        cfg.candidate_count = 2;
        CHECK(canonical_form(antitomo_defense(t, cfg).fake) != truth);
    }
}

TEST_CASE("antitomo reports failure when no decoy shape exists", "[baselines]") {
    // Two leaves admit exactly one rooted shape, so every fake equals truth.
    auto t = build_tree({{"r", "a", 1.0}, {"r", "b", 2.0}}, "r");
    BaselineConfig cfg;
    cfg.candidate_count = 3;
    CHECK_THROWS_AS(antitomo_defense(t, cfg), NoCandidate);
    cfg.candidate_count = 0;
    CHECK_THROWS_AS(antitomo_defense(t, cfg), InvariantViolation);
}
