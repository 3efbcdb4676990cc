#pragma once

// Reference defenses the trained generator is compared against: Proto
// publishes a random fake topology with fresh delays, AntiTomo additionally
// fits the fake's delays to the true observation and keeps the cheapest of
// several candidates.

#include <cstdint>
#include <string>
#include <vector>

#include "tomoguard/errors.hpp"
#include "tomoguard/numeric.hpp"
#include "tomoguard/rng.hpp"
#include "tomoguard/topology.hpp"

namespace tomoguard::baselines {

using topology::PathDelayVector;
using topology::TreeTopology;

struct BaselineConfig {
    std::size_t candidate_count = 8;
    std::uint64_t rng_seed = 0;
};

struct BaselineResult {
    PathDelayVector xt;  // published (perturbed) shared-delay vector
    TreeTopology fake;   // the decoy topology behind it
    double cost = 0.0;   // squared deviation from the true vector
};

namespace detail {

inline double squared_deviation(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline numeric::Matrix to_matrix(const topology::RoutingMatrix& a) {
    numeric::Matrix m(a.rows(), a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c)
            if (a.entries[r][c]) m.at(r, c) = 1.0;
    return m;
}

}  // namespace detail

/// Publish the shared-delay vector of a random fake tree over the same leaf
/// set, with fresh uniform [100,500] link delays.  Realizable by construction.
inline BaselineResult proto_defense(const TreeTopology& t, const BaselineConfig& cfg) {
    BaselineResult res;
    res.fake = topology::random_tree(t.leaves(), rng::derive(cfg.rng_seed, "proto"));
    res.xt = topology::shared_path_vector(res.fake);
    res.xt.role = topology::DelayRole::Perturbed;
    res.cost = detail::squared_deviation(res.xt.values,
                                         topology::shared_path_vector(t).values);
    return res;
}

/// Sample candidate_count fake trees (never the true shape), refit each one's
/// link delays toward the true vector by nonnegative least squares, and
/// publish the candidate with the smallest squared deviation.  Candidate i's
/// random stream depends only on (rng_seed, i), so enlarging candidate_count
/// keeps earlier candidates and the cost is non-increasing in it.
inline BaselineResult antitomo_defense(const TreeTopology& t, const BaselineConfig& cfg) {
    if (cfg.candidate_count == 0)
        throw InvariantViolation("candidate_count must be at least 1");
    const auto truth = topology::canonical_form(t);
    const auto x = topology::shared_path_vector(t);

    BaselineResult best;
    bool have_best = false;
    for (std::size_t i = 0; i < cfg.candidate_count; ++i) {
        TreeTopology fake;
        bool found = false;
        for (std::uint64_t retry = 0; retry < 10 && !found; ++retry) {
            fake = topology::random_tree(t.leaves(),
                                         rng::derive(cfg.rng_seed, "antitomo", i, retry));
            found = topology::canonical_form(fake) != truth;
        }
        if (!found)
            throw NoCandidate("every sampled fake equalled the true topology");

        auto a = topology::routing_matrix(fake);
        auto fit = numeric::nnls(detail::to_matrix(a), x.values);

        PathDelayVector xt;
        xt.role = topology::DelayRole::Perturbed;
        xt.pair_index = x.pair_index;
        xt.values.assign(x.values.size(), 0.0);
        for (std::size_t r = 0; r < a.rows(); ++r)
            for (std::size_t c = 0; c < a.cols(); ++c)
                if (a.entries[r][c]) xt.values[r] += fit.x[c];

        double cost = detail::squared_deviation(xt.values, x.values);
        if (!have_best || cost < best.cost) {
            best.xt = std::move(xt);
            best.fake = std::move(fake);
            best.cost = cost;
            have_best = true;
        }
    }
    return best;
}

}  // namespace tomoguard::baselines
