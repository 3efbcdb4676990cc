#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tomoguard/errors.hpp"
#include "tomoguard/rng.hpp"

namespace tomoguard::topology {

using NodeId = std::string;

struct Edge {
    NodeId parent;
    NodeId child;
    double delay_ms = 0.0;
};

/// Rooted tree with labeled leaves and positive link delays. Leaves are the
/// childless nodes, ordered ascending by id; children of every node are kept
/// in canonical order (by the sorted leaf set beneath each child), which also
/// fixes the link ordering used by routing matrices and file output.
class TreeTopology {
public:
    TreeTopology() = default;

    const NodeId& root() const { return root_; }
    const std::vector<NodeId>& leaves() const { return leaves_; }
    std::size_t leaf_count() const { return leaves_.size(); }
    const std::vector<NodeId>& nodes() const { return nodes_; }

    bool has_node(const NodeId& v) const { return children_.count(v) > 0; }

    bool is_leaf(const NodeId& v) const { return children_at(v).empty(); }

    const std::vector<NodeId>& children(const NodeId& v) const { return children_at(v); }

    const NodeId& parent(const NodeId& v) const {
        auto it = parent_.find(v);
        if (it == parent_.end()) throw InvariantViolation("node has no parent: " + v);
        return it->second;
    }

    double link_delay(const NodeId& child) const {
        auto it = delay_.find(child);
        if (it == delay_.end()) throw InvariantViolation("no link into node: " + child);
        return it->second;
    }

    /// Delay-weighted depth: sum of link delays from the root down to v.
    double depth(const NodeId& v) const { return depth_.at(v); }

    int hop_depth(const NodeId& v) const { return hop_.at(v); }

    /// Sorted list of leaves in the subtree rooted at v.
    const std::vector<NodeId>& subtree_leaves(const NodeId& v) const {
        return subtree_leaves_.at(v);
    }

    /// Links in depth-first preorder following canonical child order.
    const std::vector<std::pair<NodeId, NodeId>>& links() const { return links_; }

    const NodeId& lca(const NodeId& a, const NodeId& b) const {
        std::set<NodeId> seen;
        const NodeId* cur = &a;
        while (true) {
            seen.insert(*cur);
            if (*cur == root_) break;
            cur = &parent_.at(*cur);
        }
        cur = &b;
        while (seen.find(*cur) == seen.end()) cur = &parent_.at(*cur);
        // Return the stored instance so the reference outlives the call.
        auto it = std::lower_bound(nodes_.begin(), nodes_.end(), *cur);
        return *it;
    }

    std::size_t internal_node_count() const {
        std::size_t n = 0;
        for (const auto& v : nodes_)
            if (!is_leaf(v)) ++n;
        return n;
    }

    friend TreeTopology build_tree(const std::vector<Edge>& edges, const NodeId& root);

private:
    const std::vector<NodeId>& children_at(const NodeId& v) const {
        auto it = children_.find(v);
        if (it == children_.end()) throw InvariantViolation("unknown node: " + v);
        return it->second;
    }

    NodeId root_;
    std::vector<NodeId> nodes_;  // sorted ascending
    std::vector<NodeId> leaves_;
    std::map<NodeId, NodeId> parent_;
    std::map<NodeId, std::vector<NodeId>> children_;
    std::map<NodeId, double> delay_;  // keyed by child end of the link
    std::map<NodeId, double> depth_;
    std::map<NodeId, int> hop_;
    std::map<NodeId, std::vector<NodeId>> subtree_leaves_;
    std::vector<std::pair<NodeId, NodeId>> links_;
};

/// Validates the edge list and assembles a TreeTopology. Throws
/// NonPositiveDelay, DuplicateEdge, CycleDetected, DisconnectedNode or
/// InvariantViolation (fewer than two leaves, node with several parents).
inline TreeTopology build_tree(const std::vector<Edge>& edges, const NodeId& root) {
    if (edges.empty()) throw InvariantViolation("empty edge list");

    TreeTopology t;
    t.root_ = root;
    std::set<NodeId> node_set;
    node_set.insert(root);
    std::set<std::pair<NodeId, NodeId>> seen_edges;

    for (const auto& e : edges) {
        if (!(e.delay_ms > 0.0)) {
            throw NonPositiveDelay("link " + e.parent + "->" + e.child +
                                   " has non-positive delay");
        }
        if (e.parent == e.child) throw CycleDetected("self-loop at " + e.parent);
        if (e.child == root) throw CycleDetected("edge into root " + root);
        if (!seen_edges.insert({e.parent, e.child}).second) {
            throw DuplicateEdge("duplicate link " + e.parent + "->" + e.child);
        }
        if (t.parent_.count(e.child)) {
            throw InvariantViolation("node " + e.child + " has multiple parents");
        }
        t.parent_[e.child] = e.parent;
        t.delay_[e.child] = e.delay_ms;
        node_set.insert(e.parent);
        node_set.insert(e.child);
        t.children_[e.parent];  // ensure key
        t.children_[e.child];
        t.children_[e.parent].push_back(e.child);
    }

    // Reachability from the root; unreachable nodes are either cut off or on a
    // parent-pointer cycle.
    std::set<NodeId> reach;
    std::vector<NodeId> stack{root};
    while (!stack.empty()) {
        NodeId v = stack.back();
        stack.pop_back();
        if (!reach.insert(v).second) continue;
        for (const auto& c : t.children_[v]) stack.push_back(c);
    }
    for (const auto& v : node_set) {
        if (reach.count(v)) continue;
        std::set<NodeId> walk;
        NodeId cur = v;
        while (t.parent_.count(cur)) {
            if (!walk.insert(cur).second) throw CycleDetected("cycle through " + cur);
            cur = t.parent_[cur];
        }
        throw DisconnectedNode("node " + v + " not reachable from root");
    }

    t.nodes_.assign(node_set.begin(), node_set.end());

    for (const auto& v : t.nodes_) {
        if (t.children_[v].empty()) t.leaves_.push_back(v);
    }
    if (t.leaves_.size() < 2) throw InvariantViolation("tree has fewer than 2 leaves");

    // Subtree leaf sets, bottom-up.
    std::vector<NodeId> order;  // preorder, then reversed for bottom-up
    stack.assign(1, root);
    while (!stack.empty()) {
        NodeId v = stack.back();
        stack.pop_back();
        order.push_back(v);
        for (const auto& c : t.children_[v]) stack.push_back(c);
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto& sl = t.subtree_leaves_[*it];
        if (t.children_[*it].empty()) {
            sl.push_back(*it);
        } else {
            for (const auto& c : t.children_[*it]) {
                const auto& csl = t.subtree_leaves_[c];
                sl.insert(sl.end(), csl.begin(), csl.end());
            }
            std::sort(sl.begin(), sl.end());
        }
    }

    // Canonical child order: by sorted leaf set beneath each child. Sibling
    // leaf sets are disjoint, so this is a strict ordering.
    for (auto& [v, ch] : t.children_) {
        std::sort(ch.begin(), ch.end(), [&](const NodeId& a, const NodeId& b) {
            return t.subtree_leaves_[a] < t.subtree_leaves_[b];
        });
    }

    // Depths and canonical link order (DFS preorder over canonical children).
    t.depth_[root] = 0.0;
    t.hop_[root] = 0;
    stack.assign(1, root);
    while (!stack.empty()) {
        NodeId v = stack.back();
        stack.pop_back();
        const auto& ch = t.children_[v];
        for (auto it = ch.rbegin(); it != ch.rend(); ++it) stack.push_back(*it);
        if (v != root) {
            t.depth_[v] = t.depth_[t.parent_[v]] + t.delay_[v];
            t.hop_[v] = t.hop_[t.parent_[v]] + 1;
            t.links_.emplace_back(t.parent_[v], v);
        }
    }
    return t;
}

// ---------------------------------------------------------------------------
// Path algebra

enum class DelayRole { True, Perturbed, Observed };

inline const char* role_name(DelayRole r) {
    switch (r) {
        case DelayRole::True: return "true";
        case DelayRole::Perturbed: return "perturbed";
        case DelayRole::Observed: return "observed";
    }
    return "?";
}

/// k-vector of pairwise shared-path delays over ordered leaf pairs (i<j).
struct PathDelayVector {
    std::vector<double> values;
    DelayRole role = DelayRole::True;
    std::vector<std::pair<NodeId, NodeId>> pair_index;

    std::size_t size() const { return values.size(); }

    double at(const NodeId& a, const NodeId& b) const {
        for (std::size_t i = 0; i < pair_index.size(); ++i) {
            if ((pair_index[i].first == a && pair_index[i].second == b) ||
                (pair_index[i].first == b && pair_index[i].second == a))
                return values[i];
        }
        throw LeafSetMismatch("pair not indexed: " + a + "," + b);
    }
};

inline std::vector<std::pair<NodeId, NodeId>> leaf_pairs(const std::vector<NodeId>& leaves) {
    std::vector<std::pair<NodeId, NodeId>> out;
    for (std::size_t i = 0; i < leaves.size(); ++i)
        for (std::size_t j = i + 1; j < leaves.size(); ++j)
            out.emplace_back(leaves[i], leaves[j]);
    return out;
}

struct RoutingMatrix {
    std::vector<std::vector<std::uint8_t>> entries;  // k rows by m columns
    std::vector<std::pair<NodeId, NodeId>> pair_index;
    std::vector<std::pair<NodeId, NodeId>> link_index;

    std::size_t rows() const { return entries.size(); }
    std::size_t cols() const { return link_index.size(); }
};

struct LinkDelays {
    std::vector<double> values;  // ordered as RoutingMatrix.link_index
};

/// Binary incidence of links on the shared root prefix of each leaf pair:
/// entry[(i,j), e] = 1 iff link e lies on root->LCA(i,j).
inline RoutingMatrix routing_matrix(const TreeTopology& t) {
    RoutingMatrix a;
    a.pair_index = leaf_pairs(t.leaves());
    a.link_index = t.links();

    std::map<NodeId, std::size_t> link_of_child;
    for (std::size_t e = 0; e < a.link_index.size(); ++e)
        link_of_child[a.link_index[e].second] = e;

    a.entries.assign(a.pair_index.size(), std::vector<std::uint8_t>(a.link_index.size(), 0));
    for (std::size_t r = 0; r < a.pair_index.size(); ++r) {
        NodeId anc = t.lca(a.pair_index[r].first, a.pair_index[r].second);
        // Mark every link on root->anc.
        NodeId cur = anc;
        while (cur != t.root()) {
            a.entries[r][link_of_child[cur]] = 1;
            cur = t.parent(cur);
        }
    }
    return a;
}

inline LinkDelays link_delays(const TreeTopology& t) {
    LinkDelays mu;
    mu.values.reserve(t.links().size());
    for (const auto& [p, c] : t.links()) mu.values.push_back(t.link_delay(c));
    return mu;
}

inline PathDelayVector shared_path_vector(const RoutingMatrix& a, const LinkDelays& mu) {
    if (mu.values.size() != a.cols())
        throw DimensionMismatch("link delay vector does not match routing matrix");
    PathDelayVector x;
    x.role = DelayRole::True;
    x.pair_index = a.pair_index;
    x.values.assign(a.rows(), 0.0);
    for (std::size_t r = 0; r < a.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < a.cols(); ++c)
            if (a.entries[r][c]) s += mu.values[c];
        x.values[r] = s;
    }
    return x;
}

inline PathDelayVector shared_path_vector(const TreeTopology& t) {
    return shared_path_vector(routing_matrix(t), link_delays(t));
}

// ---------------------------------------------------------------------------
// Canonicalization

namespace detail {
inline void encode(const TreeTopology& t, const NodeId& v, std::string& out) {
    if (t.is_leaf(v)) {
        out += v;
        return;
    }
    out += '(';
    const auto& ch = t.children(v);
    for (std::size_t i = 0; i < ch.size(); ++i) {
        if (i) out += ',';
        encode(t, ch[i], out);
    }
    out += ')';
}
}  // namespace detail

/// Structure-only encoding: delays excluded, children in canonical order.
/// Equal encodings iff identical shape with identical leaf labels.
inline std::string canonical_form(const TreeTopology& t) {
    std::string s;
    detail::encode(t, t.root(), s);
    return s;
}

/// Shortlex order on canonical encodings: coarser trees (shorter encodings)
/// sort first, which makes tie-breaking prefer the least-refined candidate.
inline bool canonical_less(const std::string& a, const std::string& b) {
    if (a.size() != b.size()) return a.size() < b.size();
    return a < b;
}

// ---------------------------------------------------------------------------
// Topology spaces

struct TopologySpace {
    std::vector<TreeTopology> members;
    std::vector<std::string> canonical;  // aligned with members
    std::vector<NodeId> leaf_set;

    std::size_t size() const { return members.size(); }
};

/// Prefix for generated internal-node ids guaranteed not to produce names
/// clashing with any of the given leaf labels ("n", doubled as needed).
inline std::string internal_prefix(const std::vector<NodeId>& leaf_labels) {
    std::string prefix = "n";
    auto clashes = [&]() {
        for (const auto& lab : leaf_labels) {
            if (lab.size() <= prefix.size()) continue;
            if (lab.compare(0, prefix.size(), prefix) != 0) continue;
            bool digits = true;
            for (std::size_t i = prefix.size(); i < lab.size(); ++i)
                if (!std::isdigit(static_cast<unsigned char>(lab[i]))) {
                    digits = false;
                    break;
                }
            if (digits) return true;
        }
        return false;
    };
    while (clashes()) prefix += 'n';
    return prefix;
}

namespace detail {

struct Shape {
    bool leaf = false;
    NodeId label;                 // set when leaf
    std::vector<Shape> children;  // canonical order
    std::vector<NodeId> leafset;  // sorted
};

inline Shape make_leaf(const NodeId& id) {
    Shape s;
    s.leaf = true;
    s.label = id;
    s.leafset = {id};
    return s;
}

inline Shape make_internal(std::vector<Shape> children) {
    Shape s;
    s.children = std::move(children);
    std::sort(s.children.begin(), s.children.end(),
              [](const Shape& a, const Shape& b) { return a.leafset < b.leafset; });
    for (const auto& c : s.children)
        s.leafset.insert(s.leafset.end(), c.leafset.begin(), c.leafset.end());
    std::sort(s.leafset.begin(), s.leafset.end());
    return s;
}

inline std::size_t internal_count(const Shape& s) {
    if (s.leaf) return 0;
    std::size_t n = 1;
    for (const auto& c : s.children) n += internal_count(c);
    return n;
}

// All rooted multifurcating shapes over the given labels in which every
// internal node has at least two children. Root children correspond to the
// blocks of a set partition with >= 2 blocks; singleton blocks are leaves.
inline std::vector<Shape> enumerate_shapes(const std::vector<NodeId>& labels) {
    if (labels.size() == 1) return {make_leaf(labels[0])};

    std::vector<Shape> out;
    const std::size_t n = labels.size();
    std::vector<std::size_t> rgs(n, 0);  // restricted growth string

    auto emit_partition = [&](std::size_t nblocks) {
        if (nblocks < 2) return;
        std::vector<std::vector<NodeId>> blocks(nblocks);
        for (std::size_t i = 0; i < n; ++i) blocks[rgs[i]].push_back(labels[i]);

        // Per-block subtree choices; cartesian product across blocks.
        std::vector<std::vector<Shape>> choices;
        choices.reserve(nblocks);
        for (const auto& b : blocks) choices.push_back(enumerate_shapes(b));

        std::vector<std::size_t> idx(nblocks, 0);
        while (true) {
            std::vector<Shape> children;
            children.reserve(nblocks);
            for (std::size_t b = 0; b < nblocks; ++b) children.push_back(choices[b][idx[b]]);
            out.push_back(make_internal(std::move(children)));

            std::size_t b = 0;
            for (; b < nblocks; ++b) {
                if (++idx[b] < choices[b].size()) break;
                idx[b] = 0;
            }
            if (b == nblocks) break;
        }
    };

    // Iterate restricted growth strings.
    std::vector<std::size_t> maxv(n, 0);
    std::size_t pos = n;  // signal: first emit happens after initial fill
    rgs.assign(n, 0);
    maxv.assign(n, 0);
    while (true) {
        if (pos == n) {
            std::size_t nblocks = maxv[n - 1] + 1;
            emit_partition(nblocks);
            pos = n - 1;
            continue;
        }
        if (pos == 0) break;  // rgs[0] is fixed at 0
        if (rgs[pos] < maxv[pos - 1] + 1) {
            ++rgs[pos];
            maxv[pos] = std::max(maxv[pos - 1], rgs[pos]);
            for (std::size_t i = pos + 1; i < n; ++i) {
                rgs[i] = 0;
                maxv[i] = maxv[i - 1];
            }
            pos = n;
        } else {
            --pos;
        }
    }
    return out;
}

constexpr std::array<int, 32> kPrimes = {2,   3,   5,   7,   11,  13,  17,  19,
                                         23,  29,  31,  37,  41,  43,  47,  53,
                                         59,  61,  67,  71,  73,  79,  83,  89,
                                         97,  101, 103, 107, 109, 113, 127, 131};

inline void shape_edges(const Shape& s, const NodeId& my_id, const std::string& prefix,
                        int& next_internal, std::vector<Edge>& out) {
    for (const auto& c : s.children) {
        if (c.leaf) {
            out.push_back({my_id, c.label, 1.0});
        } else {
            NodeId cid = prefix + std::to_string(next_internal++);
            out.push_back({my_id, cid, 1.0});
            shape_edges(c, cid, prefix, next_internal, out);
        }
    }
}

inline TreeTopology shape_to_tree(const Shape& s, const std::string& prefix) {
    std::vector<Edge> edges;
    int next_internal = 2;
    NodeId root_id = prefix + "1";
    shape_edges(s, root_id, prefix, next_internal, edges);
    // Distinct prime delays in canonical link order keep enumerated members'
    // shared-path vectors free of additive coincidences.
    for (std::size_t i = 0; i < edges.size(); ++i) {
        if (i < kPrimes.size())
            edges[i].delay_ms = static_cast<double>(kPrimes[i]);
        else
            edges[i].delay_ms = static_cast<double>(131 + 2 * (i - kPrimes.size() + 1));
    }
    return build_tree(edges, root_id);
}

}  // namespace detail

constexpr std::size_t kEnumerationLeafGuard = 8;

/// Exhaustive space of rooted multifurcating leaf-labeled trees (no unary
/// internal nodes) over the leaf set, members in shortlex canonical order.
/// Member link delays are distinct small primes in canonical link order.
inline TopologySpace enumerate_topologies(const std::vector<NodeId>& leaf_set,
                                          std::size_t max_internal = SIZE_MAX) {
    if (leaf_set.size() < 2) throw InvariantViolation("leaf set must have >= 2 labels");
    if (leaf_set.size() > kEnumerationLeafGuard)
        throw SpaceTooLarge("enumeration guarded at " +
                            std::to_string(kEnumerationLeafGuard) + " leaves");
    std::vector<NodeId> labels = leaf_set;
    std::sort(labels.begin(), labels.end());
    if (std::adjacent_find(labels.begin(), labels.end()) != labels.end())
        throw InvariantViolation("duplicate leaf label");

    auto shapes = detail::enumerate_shapes(labels);
    const std::string prefix = internal_prefix(labels);
    std::map<std::string, TreeTopology, decltype(&canonical_less)> dedup(&canonical_less);
    for (const auto& s : shapes) {
        if (detail::internal_count(s) > max_internal) continue;
        TreeTopology t = detail::shape_to_tree(s, prefix);
        dedup.emplace(canonical_form(t), std::move(t));
    }

    TopologySpace space;
    space.leaf_set = labels;
    space.members.reserve(dedup.size());
    for (auto& [canon, tree] : dedup) {
        space.canonical.push_back(canon);
        space.members.push_back(std::move(tree));
    }
    return space;
}

struct ShapeParams {
    std::size_t max_fanout = 3;
};

/// Random multifurcating rooted tree over explicit leaf labels; link delays
/// i.i.d. uniform on [100,500] ms.
inline TreeTopology random_tree(const std::vector<NodeId>& leaf_labels, std::uint64_t seed,
                                const ShapeParams& params = {}) {
    if (leaf_labels.size() < 2) throw InvariantViolation("need at least 2 leaves");
    if (params.max_fanout < 2) throw InvariantViolation("max_fanout must be >= 2");

    std::mt19937_64 eng(seed);
    std::uniform_real_distribution<double> delay(100.0, 500.0);

    std::vector<NodeId> roots = leaf_labels;
    std::sort(roots.begin(), roots.end());
    if (std::adjacent_find(roots.begin(), roots.end()) != roots.end())
        throw InvariantViolation("duplicate leaf label");

    const std::string prefix = internal_prefix(roots);
    std::vector<Edge> edges;
    int next_internal = 1;
    while (roots.size() > 1) {
        std::size_t hi = std::min(params.max_fanout, roots.size());
        std::uniform_int_distribution<std::size_t> gdist(2, hi);
        std::size_t g = gdist(eng);
        NodeId nid = prefix + std::to_string(next_internal++);
        for (std::size_t pick = 0; pick < g; ++pick) {
            std::uniform_int_distribution<std::size_t> idist(0, roots.size() - 1);
            std::size_t i = idist(eng);
            edges.push_back({nid, roots[i], delay(eng)});
            roots.erase(roots.begin() + static_cast<std::ptrdiff_t>(i));
        }
        roots.push_back(nid);
    }
    return build_tree(edges, roots.front());
}

inline TreeTopology random_tree(std::size_t leaf_count, std::uint64_t seed,
                                const ShapeParams& params = {}) {
    std::vector<NodeId> labels;
    labels.reserve(leaf_count);
    for (std::size_t i = 1; i <= leaf_count; ++i) labels.push_back("v" + std::to_string(i));
    return random_tree(labels, seed, params);
}

/// One leaf subset per link: the set of leaves in the subtree below it.
/// Links stacked along a unary chain share one identity, matching the
/// delay-free indistinguishability of such chains.
inline std::set<std::vector<NodeId>> edge_leafsets(const TreeTopology& t) {
    std::set<std::vector<NodeId>> out;
    for (const auto& [p, c] : t.links()) out.insert(t.subtree_leaves(c));
    return out;
}

// ---------------------------------------------------------------------------
// Text format: "root <id>" then one "<parent> <child> <delay-ms>" per link in
// canonical order. '#' starts a comment.

inline void write_topology(std::ostream& os, const TreeTopology& t) {
    os << "root " << t.root() << "\n";
    char buf[64];
    for (const auto& [p, c] : t.links()) {
        std::snprintf(buf, sizeof(buf), "%.17g", t.link_delay(c));
        os << p << " " << c << " " << buf << "\n";
    }
}

inline TreeTopology read_topology(std::istream& is) {
    std::string line;
    bool have_root = false;
    NodeId root;
    std::vector<Edge> edges;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream ls(line);
        std::vector<std::string> tok;
        std::string w;
        while (ls >> w) tok.push_back(w);
        if (tok.empty()) continue;
        if (!have_root) {
            if (tok.size() != 2 || tok[0] != "root")
                throw ParseError("line " + std::to_string(lineno) +
                                 ": expected 'root <id>'");
            root = tok[1];
            have_root = true;
            continue;
        }
        if (tok.size() != 3)
            throw ParseError("line " + std::to_string(lineno) +
                             ": expected '<parent> <child> <delay>'");
        double d;
        try {
            std::size_t used = 0;
            d = std::stod(tok[2], &used);
            if (used != tok[2].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ParseError("line " + std::to_string(lineno) + ": bad delay '" + tok[2] +
                             "'");
        }
        edges.push_back({tok[0], tok[1], d});
    }
    if (!have_root) throw ParseError("missing 'root <id>' line");
    return build_tree(edges, root);
}

}  // namespace tomoguard::topology
