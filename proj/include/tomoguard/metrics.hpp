#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "tomoguard/errors.hpp"
#include "tomoguard/topology.hpp"

namespace tomoguard::metrics {

using topology::NodeId;
using topology::TreeTopology;

namespace detail {

// Postorder flattening for the Zhang-Shasha ordered edit distance. Children
// follow the tree's canonical order (sorted leaf set beneath, i.e. min leaf
// label first). Leaves are labeled by id; internal nodes share one label.
struct Flat {
    std::vector<std::pair<bool, NodeId>> label;  // (is_leaf, id)
    std::vector<int> lml;                        // leftmost leaf descendant
    std::vector<int> keyroots;

    int size() const { return static_cast<int>(label.size()); }
};

inline int flatten_node(const TreeTopology& t, const NodeId& v, Flat& f) {
    const auto& ch = t.children(v);
    if (ch.empty()) {
        f.label.emplace_back(true, v);
        f.lml.push_back(f.size() - 1);
        return f.size() - 1;
    }
    int first_lml = -1;
    for (std::size_t i = 0; i < ch.size(); ++i) {
        int idx = flatten_node(t, ch[i], f);
        if (i == 0) first_lml = f.lml[idx];
    }
    f.label.emplace_back(false, NodeId());
    f.lml.push_back(first_lml);
    return f.size() - 1;
}

inline Flat flatten(const TreeTopology& t) {
    Flat f;
    flatten_node(t, t.root(), f);
    for (int i = 0; i < f.size(); ++i) {
        bool key = true;
        for (int j = i + 1; j < f.size(); ++j)
            if (f.lml[j] == f.lml[i]) {
                key = false;
                break;
            }
        if (key) f.keyroots.push_back(i);
    }
    return f;
}

// Classic Zhang-Shasha tree edit distance, unit costs.
inline int ted_distance(const Flat& a, const Flat& b) {
    const int n = a.size();
    const int m = b.size();
    std::vector<std::vector<int>> td(n, std::vector<int>(m, 0));

    for (int ik : a.keyroots) {
        for (int jk : b.keyroots) {
            const int li = a.lml[ik];
            const int lj = b.lml[jk];
            const int ni = ik - li + 2;
            const int mj = jk - lj + 2;
            std::vector<std::vector<int>> fd(ni, std::vector<int>(mj, 0));
            for (int i = 1; i < ni; ++i) fd[i][0] = fd[i - 1][0] + 1;
            for (int j = 1; j < mj; ++j) fd[0][j] = fd[0][j - 1] + 1;
            for (int i = 1; i < ni; ++i) {
                for (int j = 1; j < mj; ++j) {
                    const int pi = li + i - 1;
                    const int pj = lj + j - 1;
                    if (a.lml[pi] == li && b.lml[pj] == lj) {
                        const int rel = a.label[pi] == b.label[pj] ? 0 : 1;
                        fd[i][j] = std::min({fd[i - 1][j] + 1, fd[i][j - 1] + 1,
                                             fd[i - 1][j - 1] + rel});
                        td[pi][pj] = fd[i][j];
                    } else {
                        const int ii = a.lml[pi] - li;
                        const int jj = b.lml[pj] - lj;
                        fd[i][j] = std::min({fd[i - 1][j] + 1, fd[i][j - 1] + 1,
                                             fd[ii][jj] + td[pi][pj]});
                    }
                }
            }
        }
    }
    return td[n - 1][m - 1];
}

inline int hop_diameter(const TreeTopology& t) {
    int best = 0;
    const auto& nodes = t.nodes();
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        for (std::size_t j = i + 1; j < nodes.size(); ++j) {
            const NodeId& anc = t.lca(nodes[i], nodes[j]);
            int d = t.hop_depth(nodes[i]) + t.hop_depth(nodes[j]) - 2 * t.hop_depth(anc);
            best = std::max(best, d);
        }
    }
    return best;
}

inline int undirected_degree(const TreeTopology& t, const NodeId& v) {
    return static_cast<int>(t.children(v).size()) + (v == t.root() ? 0 : 1);
}

}  // namespace detail

/// Normalized ordered tree edit similarity: 1 - D0/(D_T + D_That) where D_T
/// is the delete-everything cost, i.e. the node count under unit costs.
inline double ted_similarity(const TreeTopology& t, const TreeTopology& t_hat) {
    auto fa = detail::flatten(t);
    auto fb = detail::flatten(t_hat);
    int d0 = detail::ted_distance(fa, fb);
    return 1.0 - static_cast<double>(d0) / static_cast<double>(fa.size() + fb.size());
}

struct MetricConfig {
    // The default degree difference uses destination (leaf) degrees, which
    // is identically zero on trees; this switch compares sorted all-node
    // degree sequences instead.
    bool all_nodes_degree = false;
};

struct MetricReport {
    double ted_similarity = 1.0;
    double struct_similarity = 1.0;
    double link_distance = 0.0;
    double delta_nodes = 0.0;
    double delta_edges = 0.0;
    double delta_degree = 0.0;
    double delta_diameter = 0.0;
};

/// StructSim = 1 - (delta_nodes + delta_edges + delta_degree + delta_diameter)/4.
inline MetricReport struct_similarity(const TreeTopology& t, const TreeTopology& t_hat,
                                      const MetricConfig& cfg = {}) {
    MetricReport r;
    const double n = static_cast<double>(t.nodes().size());
    const double nh = static_cast<double>(t_hat.nodes().size());
    r.delta_nodes = std::abs(n - nh) / std::max({n, nh, 1.0});
    const double e = n - 1.0;
    const double eh = nh - 1.0;
    r.delta_edges = std::abs(e - eh) / std::max({e, eh, 1.0});

    if (cfg.all_nodes_degree) {
        std::vector<int> da, db;
        for (const auto& v : t.nodes()) da.push_back(detail::undirected_degree(t, v));
        for (const auto& v : t_hat.nodes()) db.push_back(detail::undirected_degree(t_hat, v));
        std::sort(da.rbegin(), da.rend());
        std::sort(db.rbegin(), db.rend());
        const std::size_t len = std::max(da.size(), db.size());
        da.resize(len, 0);
        db.resize(len, 0);
        double diff = 0.0, mean_true = 0.0;
        for (std::size_t i = 0; i < len; ++i) diff += std::abs(da[i] - db[i]);
        for (const auto& v : t.nodes()) mean_true += detail::undirected_degree(t, v);
        mean_true /= n;
        r.delta_degree =
            std::min(1.0, (diff / static_cast<double>(len)) / std::max(mean_true, 1.0));
    } else {
        // Destination nodes are leaves; their degree is always 1, so the
        // difference is identically zero. Kept as written.
        r.delta_degree = 0.0;
    }

    const double dia = detail::hop_diameter(t);
    const double diah = detail::hop_diameter(t_hat);
    r.delta_diameter = std::abs(dia - diah) / std::max({dia, diah, 1.0});

    r.struct_similarity =
        1.0 - 0.25 * (r.delta_nodes + r.delta_edges + r.delta_degree + r.delta_diameter);
    return r;
}

namespace detail {

inline void require_same_leaves(const TreeTopology& t, const TreeTopology& t_hat) {
    if (t.leaves() != t_hat.leaves())
        throw LeafSetMismatch("trees compare different leaf sets");
}

}  // namespace detail

/// |E symmetric-difference Ehat| where an edge's identity is the leaf cluster
/// below it; the unnormalized structural distance used in training.
inline std::size_t link_symmetric_difference(const TreeTopology& t,
                                             const TreeTopology& t_hat) {
    detail::require_same_leaves(t, t_hat);
    auto ea = topology::edge_leafsets(t);
    auto eb = topology::edge_leafsets(t_hat);
    std::size_t sym = 0;
    for (const auto& c : ea)
        if (!eb.count(c)) ++sym;
    for (const auto& c : eb)
        if (!ea.count(c)) ++sym;
    return sym;
}

/// Jaccard distance |E delta Ehat| / |E union Ehat| on leaf-cluster edges.
inline double link_distance(const TreeTopology& t, const TreeTopology& t_hat) {
    detail::require_same_leaves(t, t_hat);
    auto ea = topology::edge_leafsets(t);
    auto eb = topology::edge_leafsets(t_hat);
    std::set<std::vector<NodeId>> uni = ea;
    uni.insert(eb.begin(), eb.end());
    if (uni.empty()) return 0.0;
    std::size_t inter = 0;
    for (const auto& c : ea)
        if (eb.count(c)) ++inter;
    return static_cast<double>(uni.size() - inter) / static_cast<double>(uni.size());
}

/// All three comparison metrics in one report.
inline MetricReport metric_report(const TreeTopology& t, const TreeTopology& t_hat,
                                  const MetricConfig& cfg = {}) {
    MetricReport r = struct_similarity(t, t_hat, cfg);
    r.ted_similarity = ted_similarity(t, t_hat);
    r.link_distance = link_distance(t, t_hat);
    return r;
}

}  // namespace tomoguard::metrics
