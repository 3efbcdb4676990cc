#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tomoguard/errors.hpp"
#include "tomoguard/numeric.hpp"
#include "tomoguard/observation.hpp"
#include "tomoguard/rng.hpp"
#include "tomoguard/topology.hpp"

namespace tomoguard::attackers {

using topology::Edge;
using topology::LinkDelays;
using topology::NodeId;
using topology::PathDelayVector;
using topology::TopologySpace;
using topology::TreeTopology;

/// How link delays are chosen when scoring a candidate against observations:
/// refit nonnegative delays per candidate, or use the candidate's own delays.
enum class MuMode { Fit, Stored };

namespace detail {

inline numeric::Matrix to_matrix(const topology::RoutingMatrix& a) {
    numeric::Matrix m(a.rows(), a.cols());
    for (std::size_t r = 0; r < a.rows(); ++r)
        for (std::size_t c = 0; c < a.cols(); ++c)
            if (a.entries[r][c]) m.at(r, c) = 1.0;
    return m;
}

/// Observed values re-ordered to the canonical (sorted i<j) pair order of the
/// given leaf set; validates that the vector covers exactly those leaves.
inline std::vector<double> values_in_canonical_order(const PathDelayVector& x,
                                                     const std::vector<NodeId>& leaves) {
    auto from_x = observation::leaf_labels(x);
    if (from_x != leaves)
        throw LeafSetMismatch("observation leaf set does not match candidate leaf set");
    auto pairs = topology::leaf_pairs(leaves);
    if (x.values.size() != pairs.size())
        throw DimensionMismatch("pair index does not cover all leaf pairs");
    if (x.pair_index == pairs) return x.values;
    std::vector<double> b(pairs.size());
    for (std::size_t i = 0; i < pairs.size(); ++i)
        b[i] = x.at(pairs[i].first, pairs[i].second);
    return b;
}

}  // namespace detail

/// Squared residual between the observed shared-delay vector and the vector a
/// candidate topology produces.  With explicit delays the candidate's vector
/// is used as-is; otherwise nonnegative delays are refit by least squares.
inline double path_loss(const PathDelayVector& x_star, const TreeTopology& candidate,
                        const std::optional<LinkDelays>& mu = std::nullopt) {
    auto b = detail::values_in_canonical_order(x_star, candidate.leaves());
    auto a = topology::routing_matrix(candidate);
    if (mu.has_value()) {
        auto fitted = topology::shared_path_vector(a, *mu);
        double s = 0.0;
        for (std::size_t i = 0; i < b.size(); ++i) {
            double d = b[i] - fitted.values[i];
            s += d * d;
        }
        return s;
    }
    return numeric::nnls(detail::to_matrix(a), b).loss;
}

/// Precomputed per-candidate scorers for repeated evaluations against one
/// support set (the expensive normal-equation setup is done once).
class SupportEvaluator {
public:
    explicit SupportEvaluator(const TopologySpace& space, MuMode mode = MuMode::Fit)
        : leaves_(space.leaf_set), mode_(mode) {
        if (space.size() == 0) throw EmptySupport("support has no members");
        solvers_.reserve(space.size());
        for (const auto& t : space.members) {
            auto a = topology::routing_matrix(t);
            if (mode_ == MuMode::Fit) {
                solvers_.emplace_back(detail::to_matrix(a));
            } else {
                stored_.push_back(topology::shared_path_vector(t).values);
            }
        }
    }

    std::size_t size() const { return mode_ == MuMode::Fit ? solvers_.size() : stored_.size(); }

    std::vector<double> losses(const PathDelayVector& x) const {
        auto b = detail::values_in_canonical_order(x, leaves_);
        std::vector<double> out;
        out.reserve(size());
        if (mode_ == MuMode::Fit) {
            for (const auto& s : solvers_) out.push_back(s.solve(b).loss);
        } else {
            for (const auto& v : stored_) {
                double s = 0.0;
                for (std::size_t i = 0; i < b.size(); ++i) {
                    double d = b[i] - v[i];
                    s += d * d;
                }
                out.push_back(s);
            }
        }
        return out;
    }

private:
    std::vector<NodeId> leaves_;
    MuMode mode_;
    std::vector<numeric::NnlsSolver> solvers_;
    std::vector<std::vector<double>> stored_;
};

/// Softmax posterior exp(-beta * loss) over an explicit candidate set.
struct GibbsPosterior {
    double beta = 0.0;
    double log_z = 0.0;
    std::vector<double> losses;
    std::vector<double> weights;
    std::vector<std::string> canonical;  // aligned with the support it was built on
    std::size_t map_index = 0;
};

/// Normalize losses into posterior weights at inverse temperature beta.
/// The reported mode is the minimum-loss member; exact loss ties go to the
/// shortlex-least canonical form so coarser candidates win.
inline GibbsPosterior gibbs_from_losses(std::vector<double> losses,
                                        std::vector<std::string> canonical, double beta) {
    if (losses.empty()) throw EmptySupport("posterior support has no members");
    if (losses.size() != canonical.size())
        throw DimensionMismatch("losses and canonical forms misaligned");
    if (!(beta >= 0.0)) throw InvariantViolation("beta must be >= 0");
    for (double l : losses)
        if (!std::isfinite(l)) throw NonFiniteValue("non-finite loss in posterior support");

    GibbsPosterior post;
    post.beta = beta;
    post.losses = std::move(losses);
    post.canonical = std::move(canonical);

    std::vector<double> scores(post.losses.size());
    for (std::size_t i = 0; i < post.losses.size(); ++i) scores[i] = -beta * post.losses[i];
    post.log_z = numeric::log_sum_exp(scores);
    post.weights.resize(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        post.weights[i] = std::exp(scores[i] - post.log_z);

    std::size_t best = 0;
    for (std::size_t i = 1; i < post.losses.size(); ++i) {
        if (post.losses[i] < post.losses[best] ||
            (post.losses[i] == post.losses[best] &&
             topology::canonical_less(post.canonical[i], post.canonical[best])))
            best = i;
    }
    post.map_index = best;
    return post;
}

inline GibbsPosterior gibbs_posterior(const PathDelayVector& x_star, const TopologySpace& space,
                                      double beta, MuMode mode = MuMode::Fit) {
    SupportEvaluator eval(space, mode);
    return gibbs_from_losses(eval.losses(x_star), space.canonical, beta);
}

/// Inverse-CDF draw from the posterior weights; u01 in [0,1).
inline std::size_t sample_index(const GibbsPosterior& post, double u01) {
    double acc = 0.0;
    for (std::size_t i = 0; i < post.weights.size(); ++i) {
        acc += post.weights[i];
        if (u01 < acc) return i;
    }
    return post.weights.size() - 1;
}

// ---------------------------------------------------------------------------
// Recursive neighbor joining on shared-delay similarities

struct RnjConfig {
    /// Minimum link length threshold (ms) used both for sibling grouping
    /// (within delta/2 of the maximum) and for snapping the final node to the
    /// root.  Non-positive means: estimate from the data as the smallest
    /// positive gap between distinct observed values.
    double delta = 0.0;
};

namespace detail {

inline double estimate_delta(const std::vector<double>& values) {
    std::vector<double> distinct(values);
    distinct.push_back(0.0);  // the root sits at depth zero: its link counts
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < distinct.size(); ++i) {
        double gap = distinct[i] - distinct[i - 1];
        if (gap > 0.0 && gap < best) best = gap;
    }
    if (std::isfinite(best)) return best;
    // Single level: any positive value bounds the link scale; else fall back.
    for (double v : distinct)
        if (v > 0.0) return v;
    return 1.0;
}

}  // namespace detail

/// Bottom-up topology estimate: repeatedly merge the most-similar group of
/// active nodes (everything within delta/2 of the running maximum) under a new
/// internal node at the shared depth.  Requires a realizable input.
inline TreeTopology rnj_infer(const PathDelayVector& x_star, const RnjConfig& cfg = {}) {
    auto rep = observation::is_realizable(x_star);
    if (!rep.realizable)
        throw NotRealizable("three-point condition fails at triple {" + rep.triple[0] + ", " +
                            rep.triple[1] + ", " + rep.triple[2] + "}");

    const auto leaves = observation::leaf_labels(x_star);
    const std::size_t n = leaves.size();
    const double delta = cfg.delta > 0.0 ? cfg.delta : detail::estimate_delta(x_star.values);
    const std::string prefix = topology::internal_prefix(leaves);

    struct Active {
        NodeId id;
        bool internal = false;
        double depth = 0.0;  // meaningful for internal nodes only
    };
    std::vector<Active> active;
    active.reserve(n);
    for (const auto& v : leaves) active.push_back({v, false, 0.0});

    std::vector<std::vector<double>> sim(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            sim[i][j] = sim[j][i] = x_star.at(leaves[i], leaves[j]);

    std::map<NodeId, std::vector<NodeId>> kids;
    std::map<NodeId, double> depth_of;
    int next_internal = 1;

    while (active.size() > 1) {
        std::size_t bi = 0, bj = 1;
        double m = sim[0][1];
        for (std::size_t i = 0; i < active.size(); ++i)
            for (std::size_t j = i + 1; j < active.size(); ++j)
                if (sim[i][j] > m) {
                    m = sim[i][j];
                    bi = i;
                    bj = j;
                }

        // Everything about as close to the anchor as the best pair joins in
        // one multifurcation; the threshold is half the minimum link length.
        std::vector<std::size_t> group = {bi};
        for (std::size_t a = 0; a < active.size(); ++a) {
            if (a == bi) continue;
            if (sim[bi][a] >= m - delta / 2.0) group.push_back(a);
        }
        std::sort(group.begin(), group.end());

        NodeId w = prefix + std::to_string(next_internal++);
        depth_of[w] = m;
        auto& ch = kids[w];
        for (std::size_t a : group) ch.push_back(active[a].id);

        // Collapse the group into one active entry and take the most-similar
        // path toward every outsider.
        std::vector<Active> next_active;
        std::vector<std::size_t> keep;
        for (std::size_t a = 0; a < active.size(); ++a)
            if (!std::binary_search(group.begin(), group.end(), a)) {
                keep.push_back(a);
                next_active.push_back(active[a]);
            }
        next_active.push_back({w, true, m});

        std::vector<std::vector<double>> next_sim(next_active.size(),
                                                  std::vector<double>(next_active.size(), 0.0));
        for (std::size_t i = 0; i < keep.size(); ++i)
            for (std::size_t j = i + 1; j < keep.size(); ++j)
                next_sim[i][j] = next_sim[j][i] = sim[keep[i]][keep[j]];
        for (std::size_t i = 0; i < keep.size(); ++i) {
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t a : group) best = std::max(best, sim[keep[i]][a]);
            next_sim[i][keep.size()] = next_sim[keep.size()][i] = best;
        }
        active = std::move(next_active);
        sim = std::move(next_sim);
    }

    NodeId top = active.front().id;
    NodeId root_id;
    if (depth_of[top] <= delta / 2.0) {
        depth_of[top] = 0.0;  // indistinguishable from the root at this scale
        root_id = top;
    } else {
        root_id = prefix + std::to_string(next_internal++);
        depth_of[root_id] = 0.0;
        kids[root_id].push_back(top);
    }

    // Materialize link delays as depth differences, splicing out internal
    // children that landed at (numerically) the same depth as their parent.
    std::vector<Edge> edges;
    std::function<void(const NodeId&, const NodeId&)> emit = [&](const NodeId& p,
                                                                 const NodeId& c) {
        auto it = kids.find(c);
        bool internal = it != kids.end();
        if (internal) {
            double gap = depth_of[c] - depth_of[p];
            if (gap <= 1e-12) {
                for (const auto& gc : it->second) emit(p, gc);
                return;
            }
            edges.push_back({p, c, gap});
            for (const auto& gc : it->second) emit(c, gc);
        } else {
            edges.push_back({p, c, 1.0});
        }
    };
    for (const auto& c : kids[root_id]) emit(root_id, c);
    return topology::build_tree(edges, root_id);
}

// ---------------------------------------------------------------------------
// Shape moves shared by the likelihood chain and candidate generation

/// Star over the leaf set: the coarsest member of the topology space.
inline TreeTopology star_tree(const std::vector<NodeId>& leaf_set) {
    if (leaf_set.size() < 2) throw InvariantViolation("need at least 2 leaves");
    std::string prefix = topology::internal_prefix(leaf_set);
    NodeId root = prefix + "1";
    std::vector<Edge> edges;
    for (const auto& v : leaf_set) edges.push_back({root, v, 1.0});
    return topology::build_tree(edges, root);
}

namespace detail {

inline NodeId fresh_internal(const TreeTopology& t, const std::string& prefix) {
    long best = 0;
    for (const auto& v : t.nodes()) {
        if (v.size() <= prefix.size() || v.compare(0, prefix.size(), prefix) != 0) continue;
        bool digits = true;
        for (std::size_t i = prefix.size(); i < v.size(); ++i)
            if (!std::isdigit(static_cast<unsigned char>(v[i]))) {
                digits = false;
                break;
            }
        if (digits) best = std::max(best, std::stol(v.substr(prefix.size())));
    }
    return prefix + std::to_string(best + 1);
}

inline std::vector<Edge> shape_edge_list(const TreeTopology& t) {
    std::vector<Edge> out;
    for (const auto& [p, c] : t.links()) out.push_back({p, c, 1.0});
    return out;
}

inline std::set<NodeId> subtree_nodes(const TreeTopology& t, const NodeId& v) {
    std::set<NodeId> out;
    std::vector<NodeId> stack = {v};
    while (!stack.empty()) {
        NodeId cur = stack.back();
        stack.pop_back();
        out.insert(cur);
        for (const auto& c : t.children(cur)) stack.push_back(c);
    }
    return out;
}

}  // namespace detail

/// Split off >=2 children of an internal node with >=3 children under a new
/// internal node (refines the shape by one internal node).
inline std::optional<TreeTopology> propose_birth(const TreeTopology& t, std::mt19937_64& eng) {
    std::vector<NodeId> cands;
    for (const auto& v : t.nodes())
        if (!t.is_leaf(v) && t.children(v).size() >= 3) cands.push_back(v);
    if (cands.empty()) return std::nullopt;

    std::uniform_int_distribution<std::size_t> pick(0, cands.size() - 1);
    const NodeId& u = cands[pick(eng)];
    auto ch = t.children(u);
    std::uniform_int_distribution<std::size_t> sdist(2, ch.size() - 1);
    std::size_t take = sdist(eng);
    // Partial Fisher-Yates for a uniform subset of the chosen size.
    for (std::size_t i = 0; i < take; ++i) {
        std::uniform_int_distribution<std::size_t> idist(i, ch.size() - 1);
        std::swap(ch[i], ch[idist(eng)]);
    }
    std::set<NodeId> moved(ch.begin(), ch.begin() + static_cast<std::ptrdiff_t>(take));

    NodeId w = detail::fresh_internal(t, topology::internal_prefix(t.leaves()));
    std::vector<Edge> edges;
    for (const auto& [p, c] : t.links()) {
        if (p == u && moved.count(c)) continue;
        edges.push_back({p, c, 1.0});
    }
    edges.push_back({u, w, 1.0});
    for (const auto& c : moved) edges.push_back({w, c, 1.0});
    return topology::build_tree(edges, t.root());
}

/// Remove a non-root internal node, handing its children to its parent
/// (coarsens the shape by one internal node).
inline std::optional<TreeTopology> propose_death(const TreeTopology& t, std::mt19937_64& eng) {
    std::vector<NodeId> cands;
    for (const auto& v : t.nodes())
        if (!t.is_leaf(v) && v != t.root()) cands.push_back(v);
    if (cands.empty()) return std::nullopt;

    std::uniform_int_distribution<std::size_t> pick(0, cands.size() - 1);
    const NodeId& w = cands[pick(eng)];
    const NodeId& p = t.parent(w);
    std::vector<Edge> edges;
    for (const auto& [a, b] : t.links()) {
        if (b == w) continue;
        if (a == w)
            edges.push_back({p, b, 1.0});
        else
            edges.push_back({a, b, 1.0});
    }
    return topology::build_tree(edges, t.root());
}

/// Detach a random non-root subtree and re-attach it to a random internal
/// node elsewhere; a parent left with one child is spliced out.
inline std::optional<TreeTopology> propose_regraft(const TreeTopology& t, std::mt19937_64& eng) {
    std::vector<NodeId> movable;
    for (const auto& v : t.nodes())
        if (v != t.root()) movable.push_back(v);
    if (movable.empty()) return std::nullopt;

    std::uniform_int_distribution<std::size_t> pickv(0, movable.size() - 1);
    const NodeId v = movable[pickv(eng)];
    const NodeId p = t.parent(v);
    auto inside = detail::subtree_nodes(t, v);

    std::vector<NodeId> targets;
    for (const auto& q : t.nodes())
        if (!t.is_leaf(q) && !inside.count(q)) targets.push_back(q);
    if (targets.empty()) return std::nullopt;
    std::uniform_int_distribution<std::size_t> pickq(0, targets.size() - 1);
    const NodeId q = targets[pickq(eng)];
    if (q == p) return t;  // no-op proposal

    std::vector<Edge> edges;
    for (const auto& [a, b] : t.links()) {
        if (a == p && b == v) continue;
        edges.push_back({a, b, 1.0});
    }
    edges.push_back({q, v, 1.0});

    NodeId root = t.root();
    if (t.children(p).size() == 2) {
        // p became unary: splice it out (or promote its child when p is root).
        NodeId rem;
        for (const auto& c : t.children(p))
            if (c != v) rem = c;
        if (p == root) {
            if (t.is_leaf(rem)) return std::nullopt;
            std::vector<Edge> fixed;
            for (const auto& e : edges)
                if (!(e.parent == p && e.child == rem)) fixed.push_back(e);
            edges = std::move(fixed);
            root = rem;
        } else {
            const NodeId& pp = t.parent(p);
            std::vector<Edge> fixed;
            for (const auto& e : edges) {
                if (e.parent == pp && e.child == p) continue;
                if (e.parent == p && e.child == rem) {
                    fixed.push_back({pp, rem, 1.0});
                    continue;
                }
                fixed.push_back(e);
            }
            edges = std::move(fixed);
        }
    }
    try {
        return topology::build_tree(edges, root);
    } catch (const ValidationError&) {
        return std::nullopt;
    }
}

// ---------------------------------------------------------------------------
// Penalized-likelihood search over shapes

struct MleConfig {
    /// Per-internal-node complexity penalty; non-positive means the default
    /// 0.5 * log2(number of observed pairs).
    double lambda_pen = -1.0;
    std::size_t iters = 10000;
    /// Probabilities of refine / coarsen / regraft proposals.
    std::array<double, 3> proposal_mix = {0.3, 0.3, 0.4};
    /// Observation noise variance assumed by the likelihood.
    double sigma2 = 1.0;
    std::uint64_t rng_seed = 0;
};

struct MleResult {
    TreeTopology best;
    double best_score = 0.0;
    std::size_t proposals = 0;  // iterations attempted
    std::size_t valid = 0;      // proposals that produced a candidate
    std::size_t accepted = 0;
    double acceptance_rate = 0.0;  // accepted / valid
};

/// Metropolis search for the penalized maximum-likelihood shape: score is
/// -fit_loss/(2 sigma^2) - lambda * (#internal nodes).  Delays are refit per
/// candidate, so the chain state is the shape alone; starts from the star.
inline MleResult mle_infer(const PathDelayVector& x_star, const MleConfig& cfg = {}) {
    if (!(cfg.sigma2 > 0.0)) throw InvariantViolation("sigma2 must be positive");
    if (cfg.iters == 0) throw InvariantViolation("iters must be >= 1");
    double mix_sum = cfg.proposal_mix[0] + cfg.proposal_mix[1] + cfg.proposal_mix[2];
    if (!(mix_sum > 0.0) || cfg.proposal_mix[0] < 0 || cfg.proposal_mix[1] < 0 ||
        cfg.proposal_mix[2] < 0)
        throw InvariantViolation("proposal mix must be nonnegative with positive sum");

    const auto leaves = observation::leaf_labels(x_star);
    const std::size_t k = x_star.values.size();
    const double lambda =
        cfg.lambda_pen > 0.0 ? cfg.lambda_pen : 0.5 * std::log2(static_cast<double>(k));

    std::map<std::string, double> loss_memo;
    auto fit_loss = [&](const TreeTopology& t) {
        std::string c = topology::canonical_form(t);
        auto it = loss_memo.find(c);
        if (it != loss_memo.end()) return it->second;
        double l = path_loss(x_star, t);
        loss_memo.emplace(std::move(c), l);
        return l;
    };
    auto score_of = [&](const TreeTopology& t) {
        return -fit_loss(t) / (2.0 * cfg.sigma2) -
               lambda * static_cast<double>(t.internal_node_count());
    };

    auto eng = rng::engine(rng::derive(cfg.rng_seed, "mle-chain"));
    std::uniform_real_distribution<double> u01(0.0, 1.0);

    TreeTopology cur = star_tree(leaves);
    double cur_score = score_of(cur);

    MleResult res;
    res.best = cur;
    res.best_score = cur_score;

    const double c0 = cfg.proposal_mix[0] / mix_sum;
    const double c1 = c0 + cfg.proposal_mix[1] / mix_sum;
    std::size_t invalid_streak = 0;

    for (std::size_t it = 0; it < cfg.iters; ++it) {
        ++res.proposals;
        double r = u01(eng);
        std::optional<TreeTopology> prop;
        if (r < c0)
            prop = propose_birth(cur, eng);
        else if (r < c1)
            prop = propose_death(cur, eng);
        else
            prop = propose_regraft(cur, eng);

        if (!prop.has_value()) {
            if (++invalid_streak >= 1000)
                throw ChainDiverged("1000 consecutive invalid proposals");
            continue;
        }
        invalid_streak = 0;
        ++res.valid;

        double prop_score = score_of(*prop);
        double log_alpha = prop_score - cur_score;
        if (log_alpha >= 0.0 || std::log(u01(eng)) < log_alpha) {
            cur = std::move(*prop);
            cur_score = prop_score;
            ++res.accepted;
            if (cur_score > res.best_score) {
                res.best = cur;
                res.best_score = cur_score;
            }
        }
    }
    res.acceptance_rate =
        res.valid > 0 ? static_cast<double>(res.accepted) / static_cast<double>(res.valid) : 0.0;
    return res;
}

// ---------------------------------------------------------------------------
// Posterior support for leaf sets too large to enumerate

/// Splice out a unary root chain (the only unary pattern the bottom-up
/// estimator can produce) so the shape lies in the multifurcating space.
inline TreeTopology normalize_root_chain(const TreeTopology& t) {
    NodeId root = t.root();
    while (t.children(root).size() == 1 && !t.is_leaf(t.children(root).front()))
        root = t.children(root).front();
    if (root == t.root()) return t;
    std::vector<Edge> edges;
    auto inside = detail::subtree_nodes(t, root);
    for (const auto& [p, c] : t.links())
        if (inside.count(p)) edges.push_back({p, c, t.link_delay(c)});
    return topology::build_tree(edges, root);
}

/// Candidate set for the posterior when full enumeration is infeasible: the
/// bottom-up estimate plus a random local-edit neighborhood around it, capped
/// at `limit` members (small leaf sets fall back to full enumeration).
inline TopologySpace candidate_support(const PathDelayVector& x_star, std::size_t limit = 50,
                                       std::uint64_t rng_seed = 0, double rnj_delta = 1.0) {
    auto leaves = observation::leaf_labels(x_star);
    if (leaves.size() <= 5) return topology::enumerate_topologies(leaves);
    if (limit == 0) throw InvariantViolation("candidate limit must be >= 1");

    TreeTopology base = normalize_root_chain(rnj_infer(x_star, {rnj_delta}));
    std::map<std::string, TreeTopology, decltype(&topology::canonical_less)> pool(
        &topology::canonical_less);
    pool.emplace(topology::canonical_form(base), base);

    auto eng = rng::engine(rng::derive(rng_seed, "candidate-support"));
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::size_t attempts = 0;
    const std::size_t max_attempts = 40 * limit;
    while (pool.size() < limit && attempts < max_attempts) {
        ++attempts;
        // Random member of the pool as the edit origin.
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
        auto it = pool.begin();
        std::advance(it, static_cast<std::ptrdiff_t>(pick(eng)));
        const TreeTopology& origin = it->second;

        double r = u01(eng);
        std::optional<TreeTopology> next;
        if (r < 1.0 / 3.0)
            next = propose_birth(origin, eng);
        else if (r < 2.0 / 3.0)
            next = propose_death(origin, eng);
        else
            next = propose_regraft(origin, eng);
        if (!next.has_value()) continue;
        pool.emplace(topology::canonical_form(*next), std::move(*next));
    }

    TopologySpace space;
    space.leaf_set = leaves;
    for (auto& [canon, tree] : pool) {
        space.canonical.push_back(canon);
        space.members.push_back(std::move(tree));
    }
    return space;
}

}  // namespace tomoguard::attackers
