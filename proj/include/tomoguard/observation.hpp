#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "tomoguard/errors.hpp"
#include "tomoguard/topology.hpp"

namespace tomoguard::observation {

using topology::DelayRole;
using topology::NodeId;
using topology::PathDelayVector;

struct NoiseConfig {
    double epsilon = 0.1;
    std::uint64_t rng_seed = 0;
};

/// Mean of max(0, N(0, eps^2)).
inline double relu_noise_mean(double epsilon) {
    return epsilon / std::sqrt(2.0 * std::numbers::pi);
}

/// Entrywise X + max(0, N(0, eps^2)); never reduces an entry. Output is
/// role-tagged as the attacker-side observation.
inline PathDelayVector apply_positive_noise(const PathDelayVector& x, const NoiseConfig& cfg) {
    for (double v : x.values)
        if (v < 0.0) throw NegativeEntry("negative entry in delay vector");
    if (cfg.epsilon < 0.0) throw NegativeEntry("epsilon must be >= 0");

    PathDelayVector out = x;
    out.role = DelayRole::Observed;
    if (cfg.epsilon == 0.0) return out;

    std::mt19937_64 eng(cfg.rng_seed);
    std::normal_distribution<double> noise(0.0, cfg.epsilon);
    for (double& v : out.values) v += std::max(0.0, noise(eng));
    return out;
}

/// Sorted distinct leaf ids mentioned by the pair index.
inline std::vector<NodeId> leaf_labels(const PathDelayVector& x) {
    std::vector<NodeId> ids;
    for (const auto& [a, b] : x.pair_index) {
        ids.push_back(a);
        ids.push_back(b);
    }
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    return ids;
}

namespace detail {
inline std::vector<NodeId> leaves_of(const PathDelayVector& x) { return leaf_labels(x); }
}  // namespace detail

struct TripleReport {
    bool realizable = true;
    std::array<NodeId, 3> triple;  // set when not realizable
};

/// Three-point condition on a pairwise similarity vector: in every leaf
/// triple the two smallest values must be equal (within a relative
/// tolerance), which is exactly representability by a rooted tree.
inline TripleReport is_realizable(const PathDelayVector& x, double rel_tol = 1e-9) {
    auto leaves = detail::leaves_of(x);
    if (x.values.size() != leaves.size() * (leaves.size() - 1) / 2)
        throw DimensionMismatch("pair index does not cover all leaf pairs");

    for (std::size_t i = 0; i < leaves.size(); ++i) {
        for (std::size_t j = i + 1; j < leaves.size(); ++j) {
            for (std::size_t k = j + 1; k < leaves.size(); ++k) {
                std::array<double, 3> v = {x.at(leaves[i], leaves[j]),
                                           x.at(leaves[i], leaves[k]),
                                           x.at(leaves[j], leaves[k])};
                std::sort(v.begin(), v.end());
                double scale = std::max({1.0, std::abs(v[0]), std::abs(v[1])});
                if (v[1] - v[0] > rel_tol * scale) {
                    return {false, {leaves[i], leaves[j], leaves[k]}};
                }
            }
        }
    }
    return {true, {}};
}

/// Projects a nonnegative similarity vector onto the tree-realizable set by
/// single-linkage agglomeration: repeatedly merge the cluster pair with the
/// largest similarity (ties broken by lexicographically smallest leaf pair of
/// cluster representatives) and emit the merge value as the cophenetic value
/// of every leaf pair split by that merge. Exact identity on inputs that are
/// already realizable; idempotent in general.
inline PathDelayVector project_realizable(const PathDelayVector& x) {
    for (double v : x.values)
        if (v < 0.0) throw NegativeEntry("negative entry in delay vector");

    auto leaves = detail::leaves_of(x);
    const std::size_t n = leaves.size();
    if (x.values.size() != n * (n - 1) / 2)
        throw DimensionMismatch("pair index does not cover all leaf pairs");

    PathDelayVector out;
    out.role = x.role;
    out.pair_index = topology::leaf_pairs(leaves);
    out.values.assign(out.pair_index.size(), 0.0);
    if (n < 2) return out;

    auto pos = [&](std::size_t i, std::size_t j) {
        // index into a packed upper triangle over the sorted leaf list
        if (i > j) std::swap(i, j);
        return i * n - i * (i + 1) / 2 + (j - i - 1);
    };

    std::vector<double> sim(out.values.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            sim[pos(i, j)] = x.at(leaves[i], leaves[j]);

    // Clusters hold sorted leaf indices; representative is the front.
    std::vector<std::vector<std::size_t>> clusters;
    for (std::size_t i = 0; i < n; ++i) clusters.push_back({i});
    // Cluster-level similarity, single linkage (max of cross values).
    std::vector<std::vector<double>> cs(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) cs[i][j] = cs[j][i] = sim[pos(i, j)];

    std::vector<bool> alive(n, true);
    std::size_t alive_count = n;
    while (alive_count > 1) {
        // Find the merge pair with maximal similarity. A merged cluster stays
        // in the slot of its smallest leaf index, so ascending (i,j) scan
        // order visits representative pairs lexicographically and keeping the
        // first maximum realizes the smallest-leaf-pair tie rule.
        std::size_t bi = 0, bj = 0;
        bool found = false;
        double best = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (!alive[i]) continue;
            for (std::size_t j = i + 1; j < n; ++j) {
                if (!alive[j]) continue;
                if (!found || cs[i][j] > best) {
                    found = true;
                    best = cs[i][j];
                    bi = i;
                    bj = j;
                }
            }
        }

        for (std::size_t a : clusters[bi])
            for (std::size_t b : clusters[bj]) out.values[pos(a, b)] = best;

        // Merge bj into bi.
        clusters[bi].insert(clusters[bi].end(), clusters[bj].begin(), clusters[bj].end());
        std::sort(clusters[bi].begin(), clusters[bi].end());
        alive[bj] = false;
        --alive_count;
        for (std::size_t o = 0; o < n; ++o) {
            if (!alive[o] || o == bi) continue;
            double v = std::max(cs[bi][o], cs[bj][o]);
            cs[bi][o] = cs[o][bi] = v;
        }
    }
    return out;
}

/// Full observation channel: positive noise followed by projection.
inline PathDelayVector observe(const PathDelayVector& xt, double epsilon,
                               std::uint64_t rng_seed) {
    return project_realizable(apply_positive_noise(xt, {epsilon, rng_seed}));
}

}  // namespace tomoguard::observation
