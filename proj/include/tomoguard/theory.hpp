#pragma once

// Information-theoretic instrumentation for the tomography workbench: the
// Fano success-probability bound, plug-in mutual information on quantized
// observation channels, expected structural divergence of an attacker's
// posterior, and an entropy lower-bound checker for distance-weighted Gibbs
// posteriors.  All entropies and mutual informations are in bits.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tomoguard/attackers.hpp"
#include "tomoguard/errors.hpp"
#include "tomoguard/metrics.hpp"
#include "tomoguard/observation.hpp"
#include "tomoguard/rng.hpp"
#include "tomoguard/topology.hpp"

namespace tomoguard::theory {

using topology::PathDelayVector;
using topology::TopologySpace;
using topology::TreeTopology;

/// A discrete topology-to-observation channel: uniform prior over the space,
/// a defense map producing the published delay vector, additive positive
/// noise of the given level, and a quantization grid (ms) under which the
/// observed vectors are binned for counting-based estimators.
struct ChannelSpec {
    TopologySpace space;
    std::function<PathDelayVector(const TreeTopology&)> defense;
    observation::NoiseConfig noise;
    double quantization = 0.05;
};

inline void validate(const ChannelSpec& ch) {
    if (ch.space.size() == 0) throw EmptySpace("channel space has no members");
    if (!(ch.quantization > 0.0))
        throw InvariantViolation("quantization grid must be positive");
    if (!ch.defense) throw InvariantViolation("channel defense map is empty");
}

/// P_succ <= (I + 1) / log2 |space|, clamped into [0, 1].
inline double fano_bound(double mi_bits, std::size_t space_size) {
    if (space_size < 2)
        throw SpaceTooSmall("fano_bound needs at least two candidate topologies");
    if (!(mi_bits >= 0.0)) throw InvariantViolation("mutual information must be >= 0");
    double raw = (mi_bits + 1.0) / std::log2(static_cast<double>(space_size));
    return std::min(1.0, raw);
}

struct MiEstimate {
    double mi_bits = 0.0;
    double stderr_bits = 0.0;
    std::size_t samples_per_topology = 0;
};

struct DivergenceEstimate {
    double mean = 0.0;
    double stderr = 0.0;
    std::size_t mc = 0;
};

struct SuccessEstimate {
    double p_hat = 0.0;
    double ci_low = 0.0;
    double ci_high = 0.0;
    std::size_t trials = 0;
};

namespace detail {

inline std::vector<std::int64_t> quantize(const PathDelayVector& x, double grid) {
    std::vector<std::int64_t> key(x.values.size());
    for (std::size_t i = 0; i < x.values.size(); ++i)
        key[i] = static_cast<std::int64_t>(std::llround(x.values[i] / grid));
    return key;
}

// Plug-in mutual information from per-topology histograms of quantized
// observations.  The topology marginal is exactly uniform by construction
// (equal draw counts per member), so I = log2 N + H(X*) - H(A, X*).
inline double plugin_mi(const std::vector<std::map<std::vector<std::int64_t>, std::size_t>>& hists,
                        std::size_t per_topology) {
    const double n = static_cast<double>(hists.size());
    const double total = n * static_cast<double>(per_topology);
    std::map<std::vector<std::int64_t>, std::size_t> marginal;
    double joint_h = 0.0;
    for (const auto& hist : hists) {
        for (const auto& [key, count] : hist) {
            marginal[key] += count;
            double p = static_cast<double>(count) / total;
            joint_h -= p * std::log2(p);
        }
    }
    double obs_h = 0.0;
    for (const auto& [key, count] : marginal) {
        double p = static_cast<double>(count) / total;
        obs_h -= p * std::log2(p);
    }
    return std::log2(n) + obs_h - joint_h;
}

}  // namespace detail

/// Plug-in estimate of I(A; X*) in bits on the quantized channel, with a
/// stratified-bootstrap standard error over 20 resamples.  Requires a fully
/// enumerable space (l <= 5).
inline MiEstimate mutual_information(const ChannelSpec& ch, std::size_t samples_per_topology,
                                     std::uint64_t rng_seed) {
    validate(ch);
    if (ch.space.leaf_set.size() > 5)
        throw SpaceTooLarge("mutual information needs an enumerable space (l <= 5)");
    if (samples_per_topology == 0)
        throw InsufficientSamples("need at least one draw per topology");

    const std::size_t n = ch.space.size();
    // Per-topology draw lists retained so bootstrap resampling can stay
    // stratified (the uniform prior is then exact in every resample).
    std::vector<std::vector<std::vector<std::int64_t>>> draws(n);
    std::vector<std::map<std::vector<std::int64_t>, std::size_t>> hists(n);
    for (std::size_t a = 0; a < n; ++a) {
        auto xt = ch.defense(ch.space.members[a]);
        draws[a].reserve(samples_per_topology);
        for (std::size_t s = 0; s < samples_per_topology; ++s) {
            auto x_star = observation::observe(xt, ch.noise.epsilon,
                                               rng::derive(rng_seed, "mi-draw", a, s));
            auto key = detail::quantize(x_star, ch.quantization);
            ++hists[a][key];
            draws[a].push_back(std::move(key));
        }
    }

    MiEstimate est;
    est.samples_per_topology = samples_per_topology;
    est.mi_bits = detail::plugin_mi(hists, samples_per_topology);

    constexpr std::size_t kResamples = 20;
    std::vector<double> boot(kResamples);
    for (std::size_t b = 0; b < kResamples; ++b) {
        auto eng = rng::engine(rng::derive(rng_seed, "mi-bootstrap", b));
        std::uniform_int_distribution<std::size_t> pick(0, samples_per_topology - 1);
        std::vector<std::map<std::vector<std::int64_t>, std::size_t>> rehist(n);
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t s = 0; s < samples_per_topology; ++s)
                ++rehist[a][draws[a][pick(eng)]];
        boot[b] = detail::plugin_mi(rehist, samples_per_topology);
    }
    double mean = 0.0;
    for (double v : boot) mean += v;
    mean /= static_cast<double>(kResamples);
    double var = 0.0;
    for (double v : boot) var += (v - mean) * (v - mean);
    est.stderr_bits = std::sqrt(var / static_cast<double>(kResamples - 1));
    return est;
}

/// Monte Carlo estimate of the expected structural distance between the true
/// topology and a topology drawn from the attacker's Gibbs posterior, under
/// the channel's noise.  Distance = leaf-cluster edge symmetric difference,
/// matching the defense objective.
inline DivergenceEstimate expected_structural_divergence(const ChannelSpec& ch,
                                                         const TreeTopology& t, double beta,
                                                         std::size_t mc,
                                                         std::uint64_t rng_seed) {
    validate(ch);
    if (mc == 0) throw InsufficientSamples("need at least one Monte Carlo draw");
    auto truth_canonical = topology::canonical_form(t);
    bool found = false;
    for (const auto& c : ch.space.canonical)
        if (c == truth_canonical) found = true;
    if (!found) throw InvariantViolation("true topology is not in the channel space");

    std::vector<double> dist(ch.space.size());
    for (std::size_t i = 0; i < ch.space.size(); ++i)
        dist[i] = static_cast<double>(metrics::link_symmetric_difference(t, ch.space.members[i]));

    auto xt = ch.defense(t);
    std::vector<double> per_draw(mc);
    for (std::size_t i = 0; i < mc; ++i) {
        auto x_star = observation::observe(xt, ch.noise.epsilon,
                                           rng::derive(rng_seed, "div-draw", i));
        auto post = attackers::gibbs_posterior(x_star, ch.space, beta);
        double e = 0.0;
        for (std::size_t j = 0; j < dist.size(); ++j) e += post.weights[j] * dist[j];
        per_draw[i] = e;
    }

    DivergenceEstimate est;
    est.mc = mc;
    for (double v : per_draw) est.mean += v;
    est.mean /= static_cast<double>(mc);
    if (mc > 1) {
        double var = 0.0;
        for (double v : per_draw) var += (v - est.mean) * (v - est.mean);
        est.stderr = std::sqrt(var / static_cast<double>(mc - 1)) /
                     std::sqrt(static_cast<double>(mc));
    }
    return est;
}

/// Gibbs posterior weighted by structural distance to the reference topology
/// rather than by observation fit: P(A') ∝ exp(−β·d(T, A')).
inline attackers::GibbsPosterior distance_gibbs(const TreeTopology& t,
                                                const TopologySpace& space, double beta) {
    if (space.size() == 0) throw EmptySpace("distance posterior needs members");
    std::vector<double> dist(space.size());
    for (std::size_t i = 0; i < space.size(); ++i)
        dist[i] = static_cast<double>(metrics::link_symmetric_difference(t, space.members[i]));
    return attackers::gibbs_from_losses(std::move(dist), space.canonical, beta);
}

struct EntropyBoundReport {
    double beta = 0.0;
    double c_d = 0.0;
    double expected_distance = 0.0;
    double entropy = 0.0;  // bits
    double bound_rhs = 0.0;
    bool holds = false;
};

/// Checks H(P) >= E[d]/C_d - log2(C_d) with C_d = log2(N)/beta on a
/// distance-weighted Gibbs posterior (its stored losses are the distances).
inline EntropyBoundReport check_entropy_bound(const attackers::GibbsPosterior& posterior,
                                              double beta, std::size_t space_size) {
    if (space_size < 2) throw SpaceTooSmall("entropy bound needs at least two members");
    if (!(beta > 0.0)) throw InvariantViolation("beta must be positive");
    const double log_n = std::log2(static_cast<double>(space_size));
    if (beta > log_n)
        throw PremiseViolated("beta exceeds log2 of the space size");
    if (posterior.weights.size() != posterior.losses.size() || posterior.weights.empty())
        throw InvariantViolation("posterior is not fully populated");

    EntropyBoundReport rep;
    rep.beta = beta;
    rep.c_d = log_n / beta;
    for (std::size_t i = 0; i < posterior.weights.size(); ++i) {
        double w = posterior.weights[i];
        rep.expected_distance += w * posterior.losses[i];
        if (w > 0.0) rep.entropy -= w * std::log2(w);
    }
    rep.bound_rhs = rep.expected_distance / rep.c_d - std::log2(rep.c_d);
    rep.holds = rep.entropy >= rep.bound_rhs - 1e-9;
    return rep;
}

/// Fraction of trials in which the attacker exactly recovers a uniformly
/// drawn topology from its noisy observation, with a Wilson 95% interval.
inline SuccessEstimate empirical_success_probability(
    const ChannelSpec& ch,
    const std::function<TreeTopology(const PathDelayVector&)>& attacker, std::size_t trials,
    std::uint64_t rng_seed) {
    validate(ch);
    if (trials == 0) throw InsufficientSamples("need at least one trial");
    if (!attacker) throw InvariantViolation("attacker function is empty");

    std::size_t hits = 0;
    for (std::size_t i = 0; i < trials; ++i) {
        auto eng = rng::engine(rng::derive(rng_seed, "succ-pick", i));
        std::uniform_int_distribution<std::size_t> pick(0, ch.space.size() - 1);
        std::size_t a = pick(eng);
        auto xt = ch.defense(ch.space.members[a]);
        auto x_star = observation::observe(xt, ch.noise.epsilon,
                                           rng::derive(rng_seed, "succ-noise", i));
        auto guess = attacker(x_star);
        if (topology::canonical_form(guess) == ch.space.canonical[a]) ++hits;
    }

    SuccessEstimate est;
    est.trials = trials;
    est.p_hat = static_cast<double>(hits) / static_cast<double>(trials);
    const double z = 1.959963984540054;  // 95% two-sided normal quantile
    const double nn = static_cast<double>(trials);
    double denom = 1.0 + z * z / nn;
    double center = (est.p_hat + z * z / (2.0 * nn)) / denom;
    double half = z *
                  std::sqrt(est.p_hat * (1.0 - est.p_hat) / nn +
                            z * z / (4.0 * nn * nn)) /
                  denom;
    est.ci_low = std::max(0.0, center - half);
    est.ci_high = std::min(1.0, center + half);
    return est;
}

}  // namespace tomoguard::theory
