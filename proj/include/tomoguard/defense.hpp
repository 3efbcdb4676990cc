#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "tomoguard/attackers.hpp"
#include "tomoguard/errors.hpp"
#include "tomoguard/metrics.hpp"
#include "tomoguard/neuralcore.hpp"
#include "tomoguard/numeric.hpp"
#include "tomoguard/observation.hpp"
#include "tomoguard/rng.hpp"
#include "tomoguard/topology.hpp"

namespace tomoguard::defense {

using topology::NodeId;
using topology::PathDelayVector;
using topology::TopologySpace;
using topology::TreeTopology;

// ---------------------------------------------------------------------------
// Generator parameters

/// Message-passing perturbation generator over the tree: per-layer message
/// and update networks, learned internal-node embeddings bucketed by role,
/// and a scalar readout head per leaf pair.
struct GeneratorParams {
    std::size_t layers = 3;
    std::size_t hidden_dim = 32;
    /// Output head scale: entry delta = scale * (softplus(raw) - softplus(0)),
    /// so the zero-initialized head is an exact no-op and deltas can span the
    /// delay range without huge raw readouts.
    double softplus_scale = 10.0;
    std::vector<neuralcore::DenseNet> msg_nets;     // per layer: (2h+3) -> h
    std::vector<neuralcore::DenseNet> update_nets;  // per layer: (2h) -> h
    std::map<std::string, std::vector<double>> internal_embedding_table;
    neuralcore::DenseNet readout_net;  // (2h) -> 1, identity output
};

inline const std::array<const char*, 3> kEmbeddingRoles = {"root", "depth1", "deep"};

inline GeneratorParams init_generator(std::uint64_t rng_seed = 0, std::size_t layers = 3,
                                      std::size_t hidden_dim = 32) {
    if (layers < 1) throw InvariantViolation("generator needs at least one layer");
    if (hidden_dim < 1) throw InvariantViolation("hidden_dim must be >= 1");

    GeneratorParams g;
    g.layers = layers;
    g.hidden_dim = hidden_dim;
    const std::size_t h = hidden_dim;
    for (std::size_t l = 0; l < layers; ++l) {
        g.msg_nets.push_back(neuralcore::init_params(
            {2 * h + 3, h}, {neuralcore::Activation::Relu}, rng::derive(rng_seed, "msg", l)));
        g.update_nets.push_back(neuralcore::init_params(
            {2 * h, h}, {neuralcore::Activation::Relu}, rng::derive(rng_seed, "update", l)));
    }
    // Zero head: perturbation starts as the exact identity.
    g.readout_net = neuralcore::zero_params({2 * h, 1}, {neuralcore::Activation::Identity});

    for (std::size_t r = 0; r < kEmbeddingRoles.size(); ++r) {
        auto eng = rng::engine(rng::derive(rng_seed, "embed", r));
        std::uniform_real_distribution<double> u(-0.1, 0.1);
        std::vector<double> e(h);
        for (auto& v : e) v = u(eng);
        g.internal_embedding_table[kEmbeddingRoles[r]] = std::move(e);
    }
    return g;
}

// ---------------------------------------------------------------------------
// Flat parameter view (training and checkpoints)

inline neuralcore::ParamVector generator_params_flat(const GeneratorParams& g) {
    neuralcore::ParamVector pv;
    auto push_net = [&](const std::string& name, const neuralcore::DenseNet& net) {
        std::size_t before = pv.values.size();
        neuralcore::append_flat(net, pv.values);
        pv.index.emplace_back(name, pv.values.size() - before);
    };
    for (std::size_t l = 0; l < g.msg_nets.size(); ++l)
        push_net("msg" + std::to_string(l), g.msg_nets[l]);
    for (std::size_t l = 0; l < g.update_nets.size(); ++l)
        push_net("update" + std::to_string(l), g.update_nets[l]);
    for (const auto& role : kEmbeddingRoles) {
        const auto& e = g.internal_embedding_table.at(role);
        pv.values.insert(pv.values.end(), e.begin(), e.end());
        pv.index.emplace_back(std::string("embed_") + role, e.size());
    }
    push_net("readout", g.readout_net);
    return pv;
}

inline void load_generator_flat(GeneratorParams& g, const std::vector<double>& flat) {
    std::size_t expect = generator_params_flat(g).values.size();
    if (flat.size() != expect)
        throw ShapeMismatch("parameter vector size " + std::to_string(flat.size()) +
                            " does not match generator (" + std::to_string(expect) + ")");
    std::size_t cursor = 0;
    for (auto& net : g.msg_nets) neuralcore::load_flat(net, flat, cursor);
    for (auto& net : g.update_nets) neuralcore::load_flat(net, flat, cursor);
    for (const auto& role : kEmbeddingRoles) {
        for (auto& v : g.internal_embedding_table.at(role)) v = flat[cursor++];
    }
    neuralcore::load_flat(g.readout_net, flat, cursor);
}

inline void save_generator(const std::string& path, const GeneratorParams& g) {
    neuralcore::save_checkpoint(path, generator_params_flat(g));
}

inline GeneratorParams load_generator(const std::string& path, std::size_t layers = 3,
                                      std::size_t hidden_dim = 32) {
    GeneratorParams g = init_generator(0, layers, hidden_dim);
    auto pv = neuralcore::load_checkpoint(path);
    load_generator_flat(g, pv.values);
    return g;
}

// ---------------------------------------------------------------------------
// Features and the forward pass

/// Per-edge features seen by the message nets, identified by the child end:
/// link delay scaled to the nominal [100,500] ms range, subtree leaf count,
/// and hop depth of the child.
inline std::array<double, 3> edge_features(const TreeTopology& t, const NodeId& child) {
    return {t.link_delay(child) / 500.0,
            static_cast<double>(t.subtree_leaves(child).size()),
            static_cast<double>(t.hop_depth(child))};
}

/// Initial embeddings: leaves get a one-hot of their index in sorted order
/// (padded to hidden_dim); internal nodes share a learned vector per role
/// bucket (root, children of the root, everything deeper).
inline std::map<NodeId, std::vector<double>> node_features(const GeneratorParams& g,
                                                           const TreeTopology& t) {
    const auto& leaves = t.leaves();
    if (leaves.size() > g.hidden_dim)
        throw LeafCountExceedsDim("leaf count " + std::to_string(leaves.size()) +
                                  " exceeds hidden_dim " + std::to_string(g.hidden_dim));
    std::map<NodeId, std::vector<double>> h;
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        std::vector<double> v(g.hidden_dim, 0.0);
        v[i] = 1.0;
        h[leaves[i]] = std::move(v);
    }
    for (const auto& v : t.nodes()) {
        if (t.is_leaf(v)) continue;
        int d = t.hop_depth(v);
        const char* role = d == 0 ? "root" : (d == 1 ? "depth1" : "deep");
        h[v] = g.internal_embedding_table.at(role);
    }
    return h;
}

namespace detail {

inline std::vector<double> concat2(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

inline std::vector<double> msg_input(const std::vector<double>& h_from,
                                     const std::vector<double>& h_to,
                                     const std::array<double, 3>& e) {
    std::vector<double> in;
    in.reserve(h_from.size() + h_to.size() + e.size());
    in.insert(in.end(), h_from.begin(), h_from.end());
    in.insert(in.end(), h_to.begin(), h_to.end());
    in.insert(in.end(), e.begin(), e.end());
    return in;
}

/// Internal nodes ordered deepest-first (ids break ties) so an upward sweep
/// sees fully updated children.
inline std::vector<NodeId> internal_bottom_up(const TreeTopology& t) {
    std::vector<NodeId> order;
    for (const auto& v : t.nodes())
        if (!t.is_leaf(v)) order.push_back(v);
    std::stable_sort(order.begin(), order.end(), [&](const NodeId& a, const NodeId& b) {
        return t.hop_depth(a) > t.hop_depth(b);
    });
    return order;
}

}  // namespace detail

/// Final node embeddings after `layers` rounds of an upward (children to
/// parent, mean-aggregated) then downward (parent to child) sweep, updating
/// in place so information propagates across the tree within one layer.
inline std::map<NodeId, std::vector<double>> node_embeddings(const GeneratorParams& g,
                                                             const TreeTopology& t) {
    auto h = node_features(g, t);
    auto up_order = detail::internal_bottom_up(t);
    for (std::size_t l = 0; l < g.layers; ++l) {
        const auto& msg = g.msg_nets[l];
        const auto& upd = g.update_nets[l];
        for (const auto& v : up_order) {
            const auto& ch = t.children(v);
            std::vector<double> agg(g.hidden_dim, 0.0);
            for (const auto& c : ch) {
                auto m = neuralcore::forward(msg, detail::msg_input(h[c], h[v],
                                                                    edge_features(t, c)));
                for (std::size_t i = 0; i < agg.size(); ++i) agg[i] += m[i];
            }
            for (auto& x : agg) x /= static_cast<double>(ch.size());
            h[v] = neuralcore::forward(upd, detail::concat2(h[v], agg));
        }
        // Preorder guarantees parents are refreshed before their children.
        for (const auto& [p, c] : t.links()) {
            auto m = neuralcore::forward(msg, detail::msg_input(h[p], h[c],
                                                                edge_features(t, c)));
            h[c] = neuralcore::forward(upd, detail::concat2(h[c], m));
        }
    }
    return h;
}

/// Symmetric pairwise readout: raw score of the (sum, product) combine of the
/// two leaf embeddings.  Symmetric in its arguments by construction.
inline double pair_raw_score(const GeneratorParams& g,
                             const std::map<NodeId, std::vector<double>>& h, const NodeId& a,
                             const NodeId& b) {
    const auto& ha = h.at(a);
    const auto& hb = h.at(b);
    std::vector<double> z;
    z.reserve(2 * ha.size());
    for (std::size_t i = 0; i < ha.size(); ++i) z.push_back(ha[i] + hb[i]);
    for (std::size_t i = 0; i < ha.size(); ++i) z.push_back(ha[i] * hb[i]);
    return neuralcore::forward(g.readout_net, z)[0];
}

/// Perturbed shared-delay vector: each entry is shifted by the softplus-
/// reparameterized readout and clamped at zero.  Zero-initialized readout
/// makes this the exact identity on the true vector.
inline PathDelayVector perturb(const GeneratorParams& g, const TreeTopology& t) {
    auto h = node_embeddings(g, t);
    auto x = topology::shared_path_vector(t);
    const double base = numeric::softplus(0.0);
    for (std::size_t i = 0; i < x.values.size(); ++i) {
        double raw = pair_raw_score(g, h, x.pair_index[i].first, x.pair_index[i].second);
        double delta = g.softplus_scale * (numeric::softplus(raw) - base);
        double v = x.values[i] + delta;
        if (!std::isfinite(v)) throw NonFiniteOutput("perturb: non-finite entry");
        x.values[i] = std::max(0.0, v);
    }
    x.role = topology::DelayRole::Perturbed;
    return x;
}

/// Squared Euclidean deviation of the perturbed vector from the true one;
/// doubles as the defender's publishing cost.
inline double regularization(const PathDelayVector& xt, const PathDelayVector& x) {
    if (xt.pair_index != x.pair_index)
        throw DimensionMismatch("regularization: pair indices differ");
    double s = 0.0;
    for (std::size_t i = 0; i < x.values.size(); ++i) {
        double d = xt.values[i] - x.values[i];
        s += d * d;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
    double beta_min = 0.1;
    double beta_max = 2.0;
    std::size_t beta_grid_size = 8;
    double lambda_reg = 0.1;
    double epsilon = 0.1;
    std::size_t max_iters = 120;
    std::size_t mc_samples = 8;
    std::size_t candidate_limit = 50;
    double learning_rate = 0.01;
    std::uint64_t rng_seed = 0;
};

inline void validate(const TrainConfig& cfg) {
    if (!(cfg.beta_min > 0.0) || !(cfg.beta_min <= cfg.beta_max))
        throw InvariantViolation("need 0 < beta_min <= beta_max");
    if (cfg.beta_grid_size < 1) throw InvariantViolation("beta_grid_size must be >= 1");
    if (cfg.lambda_reg < 0.0) throw InvariantViolation("lambda_reg must be >= 0");
    if (cfg.epsilon < 0.0) throw InvariantViolation("epsilon must be >= 0");
    if (cfg.mc_samples < 1) throw InvariantViolation("mc_samples must be >= 1");
    if (!(cfg.learning_rate > 0.0)) throw InvariantViolation("learning_rate must be > 0");
}

inline std::vector<double> beta_grid(const TrainConfig& cfg) {
    validate(cfg);
    std::vector<double> grid;
    if (cfg.beta_grid_size == 1) {
        grid.push_back(cfg.beta_min);
        return grid;
    }
    for (std::size_t i = 0; i < cfg.beta_grid_size; ++i)
        grid.push_back(cfg.beta_min + (cfg.beta_max - cfg.beta_min) * static_cast<double>(i) /
                                          static_cast<double>(cfg.beta_grid_size - 1));
    return grid;
}

namespace detail {

/// Everything that depends only on (truth, support): per-member solvers and
/// the structural distance of each member from the truth.
struct SupportContext {
    attackers::SupportEvaluator eval;
    std::vector<double> dist;

    SupportContext(const TreeTopology& truth, const TopologySpace& space)
        : eval(space, attackers::MuMode::Fit) {
        dist.reserve(space.size());
        for (const auto& m : space.members)
            dist.push_back(static_cast<double>(metrics::link_symmetric_difference(truth, m)));
    }
};

/// Per-sample candidate losses under the observation channel applied to the
/// current perturbed vector.  The noise draws depend only on the seed, so a
/// fixed seed gives common random numbers across parameter probes.
inline std::vector<std::vector<double>> sample_losses(const GeneratorParams& g,
                                                      const TreeTopology& t,
                                                      const SupportContext& ctx,
                                                      const TrainConfig& cfg,
                                                      std::uint64_t noise_seed) {
    auto xt = perturb(g, t);
    std::vector<std::vector<double>> out;
    out.reserve(cfg.mc_samples);
    for (std::size_t s = 0; s < cfg.mc_samples; ++s) {
        auto noisy = observation::apply_positive_noise(
            xt, {cfg.epsilon, rng::derive(noise_seed, "draw", s)});
        auto star = observation::project_realizable(noisy);
        out.push_back(ctx.eval.losses(star));
    }
    return out;
}

/// Monte Carlo estimate of -E[E_posterior d(truth, member)] at one beta.
inline double neg_expected_divergence(const std::vector<std::vector<double>>& losses,
                                      const std::vector<double>& dist, double beta) {
    double acc = 0.0;
    for (const auto& l : losses) {
        std::vector<double> scores(l.size());
        for (std::size_t i = 0; i < l.size(); ++i) scores[i] = -beta * l[i];
        double log_z = numeric::log_sum_exp(scores);
        double e = 0.0;
        for (std::size_t i = 0; i < l.size(); ++i) e += std::exp(scores[i] - log_z) * dist[i];
        acc += e;
    }
    return -acc / static_cast<double>(losses.size());
}

}  // namespace detail

/// Defender objective component at one beta: negative expected structural
/// divergence of the posterior from the truth, under the noisy channel
/// applied to the current perturbation.
inline double structural_loss(const GeneratorParams& g, double beta, const TreeTopology& t,
                              const TopologySpace& space, const TrainConfig& cfg) {
    if (space.size() == 0) throw EmptySpace("support has no members");
    detail::SupportContext ctx(t, space);
    auto losses = detail::sample_losses(g, t, ctx, cfg, rng::derive(cfg.rng_seed, "loss-mc"));
    return detail::neg_expected_divergence(losses, ctx.dist, beta);
}

/// The attacker step: grid beta that maximizes the structural loss (i.e.
/// minimizes how far the posterior is pushed).  Ties go to the smallest beta.
inline double select_worst_beta(const GeneratorParams& g, const TreeTopology& t,
                                const TopologySpace& space, const TrainConfig& cfg) {
    if (space.size() == 0) throw EmptySpace("support has no members");
    detail::SupportContext ctx(t, space);
    auto losses = detail::sample_losses(g, t, ctx, cfg, rng::derive(cfg.rng_seed, "select-mc"));
    auto grid = beta_grid(cfg);
    double best_beta = grid.front();
    double best = detail::neg_expected_divergence(losses, ctx.dist, grid.front());
    for (std::size_t i = 1; i < grid.size(); ++i) {
        double v = detail::neg_expected_divergence(losses, ctx.dist, grid[i]);
        if (v > best) {
            best = v;
            best_beta = grid[i];
        }
    }
    return best_beta;
}

struct TrainingTrace {
    struct Row {
        std::size_t iter = 0;
        double beta_star = 0.0;
        double objective = 0.0;  // value before the defender update
        double reg = 0.0;
    };
    std::vector<Row> rows;
};

inline void write_trace_csv(std::ostream& os, const TrainingTrace& trace) {
    os << "iter,beta_star,objective,reg\n";
    char buf[128];
    for (const auto& r : trace.rows) {
        std::snprintf(buf, sizeof(buf), "%zu,%.6f,%.6f,%.6f\n", r.iter, r.beta_star,
                      r.objective, r.reg);
        os << buf;
    }
}

struct TrainResult {
    GeneratorParams params;
    TrainingTrace trace;
};

// Slack for the blocked-update test below.  Zero slack strands the optimizer
// at the identity: from there every full step pays the quadratic deviation
// penalty on all pairs at once, while the divergence payoff starts linear and
// small, so nothing would ever be accepted.
inline constexpr double kBlockTolerance = 5e-3;

/// Alternating min-max training: per iteration the attacker picks the grid
/// beta that hurts the defense most, then the defender takes one Adam step
/// on a simultaneous-perturbation gradient of structural loss + lambda *
/// regularization.  All randomness (noise draws, probe directions) derives
/// from cfg.rng_seed, and noise draws are shared across the probe pair.
inline TrainResult train(const TreeTopology& t, const TopologySpace& space,
                         const TrainConfig& cfg) {
    validate(cfg);
    if (space.size() == 0) throw EmptySpace("support has no members");

    TrainResult res;
    res.params = init_generator(rng::derive(cfg.rng_seed, "init"));
    detail::SupportContext ctx(t, space);
    auto grid = beta_grid(cfg);
    const auto x_true = topology::shared_path_vector(t);

    auto flat = generator_params_flat(res.params);
    neuralcore::AdamState adam;
    adam.lr = cfg.learning_rate;
    GeneratorParams scratch = res.params;

    auto attacker_best = [&](const std::vector<std::vector<double>>& losses) {
        double beta_star = grid.front();
        double best = detail::neg_expected_divergence(losses, ctx.dist, grid.front());
        for (std::size_t i = 1; i < grid.size(); ++i) {
            double v = detail::neg_expected_divergence(losses, ctx.dist, grid[i]);
            if (v > best) {
                best = v;
                beta_star = grid[i];
            }
        }
        return std::pair<double, double>(best, beta_star);
    };

    for (std::size_t it = 0; it < cfg.max_iters; ++it) {
        const std::uint64_t noise_seed = rng::derive(cfg.rng_seed, "iter-noise", it);

        auto losses = detail::sample_losses(res.params, t, ctx, cfg, noise_seed);
        auto [best, beta_star] = attacker_best(losses);

        double reg = regularization(perturb(res.params, t), x_true);
        double objective = best + cfg.lambda_reg * reg;
        if (!std::isfinite(objective)) throw DivergedObjective("non-finite objective");
        res.trace.rows.push_back({it, beta_star, objective, reg});

        // One SPSA probe pair sharing the iteration's noise draws.
        auto f = [&](const std::vector<double>& theta) {
            load_generator_flat(scratch, theta);
            auto probe_losses = detail::sample_losses(scratch, t, ctx, cfg, noise_seed);
            double sl = detail::neg_expected_divergence(probe_losses, ctx.dist, beta_star);
            double r = regularization(perturb(scratch, t), x_true);
            return sl + cfg.lambda_reg * r;
        };
        neuralcore::GradientConfig gcfg;
        gcfg.spsa = true;
        gcfg.step = 0.01;
        gcfg.probes = 1;
        gcfg.rng_seed = rng::derive(cfg.rng_seed, "spsa", it);
        auto grad = neuralcore::numeric_gradient(f, flat.values, gcfg);

        auto previous = flat.values;
        neuralcore::adam_step(adam, flat.values, grad);
        load_generator_flat(res.params, flat.values);

        // Blocked update: a step that worsens the worst-case objective under
        // the same noise draws beyond a small slack is rejected (the moment
        // estimates still advance, so a consistent descent direction can build
        // up across rejections).
        auto stepped_losses = detail::sample_losses(res.params, t, ctx, cfg, noise_seed);
        double stepped = attacker_best(stepped_losses).first +
                         cfg.lambda_reg * regularization(perturb(res.params, t), x_true);
        if (!(stepped <= objective + kBlockTolerance)) {
            flat.values = previous;
            load_generator_flat(res.params, flat.values);
        }
    }
    return res;
}

}  // namespace tomoguard::defense
