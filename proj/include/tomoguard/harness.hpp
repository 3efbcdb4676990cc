#pragma once
// Experiment harness: strict JSON configs, the defense x attacker x noise
// grid with paired per-trial seeds, CSV/JSON result emission, and the worker
// functions behind each CLI subcommand.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tomoguard/attackers.hpp"
#include "tomoguard/baselines.hpp"
#include "tomoguard/defense.hpp"
#include "tomoguard/errors.hpp"
#include "tomoguard/metrics.hpp"
#include "tomoguard/observation.hpp"
#include "tomoguard/rng.hpp"
#include "tomoguard/theory.hpp"
#include "tomoguard/topology.hpp"

namespace tomoguard::harness {

using nlohmann::json;
using topology::DelayRole;
using topology::PathDelayVector;
using topology::TopologySpace;
using topology::TreeTopology;

// ---------------------------------------------------------------------------
// Config schema
//
// Configs are flat JSON objects with a small number of nested sections.  Keys
// are strict: anything unrecognized raises ConfigInvalid so typos fail fast
// instead of silently running with defaults.

enum class DefenseKind { None, Roto, Proto, Antitomo };
enum class AttackKind { Gibbs, Rnj, Mle };

inline const char* defense_name(DefenseKind d) {
    switch (d) {
        case DefenseKind::None: return "none";
        case DefenseKind::Roto: return "roto";
        case DefenseKind::Proto: return "proto";
        case DefenseKind::Antitomo: return "antitomo";
    }
    return "?";
}

inline const char* attack_name(AttackKind a) {
    switch (a) {
        case AttackKind::Gibbs: return "gibbs";
        case AttackKind::Rnj: return "rnj";
        case AttackKind::Mle: return "mle";
    }
    return "?";
}

inline DefenseKind parse_defense(const std::string& s) {
    if (s == "none") return DefenseKind::None;
    if (s == "roto") return DefenseKind::Roto;
    if (s == "proto") return DefenseKind::Proto;
    if (s == "antitomo") return DefenseKind::Antitomo;
    throw ConfigInvalid("unknown defense \"" + s +
                        "\" (expected none|roto|proto|antitomo)");
}

inline AttackKind parse_attack(const std::string& s) {
    if (s == "gibbs") return AttackKind::Gibbs;
    if (s == "rnj") return AttackKind::Rnj;
    if (s == "mle") return AttackKind::Mle;
    throw ConfigInvalid("unknown attacker \"" + s + "\" (expected gibbs|rnj|mle)");
}

/// Where the experiment topology comes from: an explicit file, or the seeded
/// generator.  Generated delays are drawn uniform on [100,500] ms and then
/// mapped linearly onto [delay_min, delay_max].
struct TopologySource {
    std::string file;  // wins when non-empty
    std::size_t leaves = 4;
    std::uint64_t seed = 0;
    std::size_t max_fanout = 3;
    double delay_min = 100.0;
    double delay_max = 500.0;
};

/// Attacker knobs shared by every subcommand that runs an attack.
struct AttackParams {
    double rnj_delta = 1.0;    // sibling-grouping threshold (ms) under noise
    std::size_t mle_iters = 2000;
    double mle_sigma2 = 1.0;
};

struct ExperimentConfig {
    TopologySource topology;
    std::vector<DefenseKind> defenses{DefenseKind::None, DefenseKind::Roto};
    std::vector<AttackKind> attackers{AttackKind::Gibbs, AttackKind::Rnj};
    std::vector<double> noise_sweep{0.0, 0.05, 0.1};
    std::size_t trials = 5;
    std::uint64_t rng_seed = 0;
    defense::TrainConfig train;   // rng_seed field is ignored; derived from ours
    std::size_t baseline_candidates = 8;
    AttackParams attack;
};

inline void validate(const ExperimentConfig& cfg) {
    if (cfg.defenses.empty()) throw ConfigInvalid("defenses list is empty");
    if (cfg.attackers.empty()) throw ConfigInvalid("attackers list is empty");
    if (cfg.noise_sweep.empty()) throw ConfigInvalid("noise_sweep is empty");
    for (double e : cfg.noise_sweep)
        if (!(e >= 0.0)) throw ConfigInvalid("noise_sweep entries must be >= 0");
    if (cfg.trials == 0) throw ConfigInvalid("trials must be >= 1");
    if (cfg.topology.file.empty() && cfg.topology.leaves < 2)
        throw ConfigInvalid("generated topologies need at least two leaves");
    if (!(cfg.topology.delay_min > 0.0) || cfg.topology.delay_max < cfg.topology.delay_min)
        throw ConfigInvalid("need 0 < delay_min <= delay_max");
    if (cfg.attack.mle_iters == 0) throw ConfigInvalid("mle_iters must be >= 1");
    if (!(cfg.attack.mle_sigma2 > 0.0)) throw ConfigInvalid("mle_sigma2 must be > 0");
    if (cfg.baseline_candidates == 0)
        throw ConfigInvalid("baseline candidate_count must be >= 1");
}

// ---------------------------------------------------------------------------
// Strict JSON helpers

namespace detail {

inline void expect_object(const json& j, const std::string& ctx) {
    if (!j.is_object()) throw ConfigInvalid(ctx + " must be a JSON object");
}

inline void expect_keys(const json& j, const std::vector<std::string>& allowed,
                        const std::string& ctx) {
    expect_object(j, ctx);
    for (const auto& item : j.items()) {
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end())
            throw ConfigInvalid("unknown key \"" + item.key() + "\" in " + ctx);
    }
}

inline double number_at(const json& j, const char* key, double fallback,
                        const std::string& ctx) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_number()) throw ConfigInvalid(ctx + "." + key + " must be a number");
    return v.get<double>();
}

inline std::uint64_t uint_at(const json& j, const char* key, std::uint64_t fallback,
                             const std::string& ctx) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw ConfigInvalid(ctx + "." + key + " must be a nonnegative integer");
}

inline std::size_t size_at(const json& j, const char* key, std::size_t fallback,
                           const std::string& ctx) {
    return static_cast<std::size_t>(uint_at(j, key, fallback, ctx));
}

inline std::string string_at(const json& j, const char* key, const std::string& fallback,
                             const std::string& ctx) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_string()) throw ConfigInvalid(ctx + "." + key + " must be a string");
    return v.get<std::string>();
}

template <typename Parse>
inline auto string_list_at(const json& j, const char* key, const std::string& ctx,
                           Parse parse) -> std::vector<decltype(parse(std::string{}))> {
    std::vector<decltype(parse(std::string{}))> out;
    const json& v = j.at(key);
    if (!v.is_array() || v.empty())
        throw ConfigInvalid(ctx + "." + key + " must be a non-empty array of strings");
    for (const auto& e : v) {
        if (!e.is_string())
            throw ConfigInvalid(ctx + "." + key + " must contain only strings");
        out.push_back(parse(e.get<std::string>()));
    }
    return out;
}

}  // namespace detail

inline TopologySource parse_topology_source(const json& j, bool allow_file = true) {
    std::vector<std::string> allowed{"leaves", "seed", "max_fanout", "delay_min",
                                     "delay_max"};
    if (allow_file) allowed.push_back("file");
    detail::expect_keys(j, allowed, "topology");
    TopologySource src;
    src.file = detail::string_at(j, "file", "", "topology");
    if (!src.file.empty() && (j.contains("leaves") || j.contains("seed")))
        throw ConfigInvalid("topology: give either \"file\" or generator parameters, not both");
    src.leaves = detail::size_at(j, "leaves", src.leaves, "topology");
    src.seed = detail::uint_at(j, "seed", src.seed, "topology");
    src.max_fanout = detail::size_at(j, "max_fanout", src.max_fanout, "topology");
    src.delay_min = detail::number_at(j, "delay_min", src.delay_min, "topology");
    src.delay_max = detail::number_at(j, "delay_max", src.delay_max, "topology");
    return src;
}

inline defense::TrainConfig parse_train_config(const json& j) {
    detail::expect_keys(j,
                        {"beta_min", "beta_max", "beta_grid_size", "lambda_reg", "epsilon",
                         "max_iters", "mc_samples", "candidate_limit", "learning_rate"},
                        "train");
    defense::TrainConfig tc;
    tc.beta_min = detail::number_at(j, "beta_min", tc.beta_min, "train");
    tc.beta_max = detail::number_at(j, "beta_max", tc.beta_max, "train");
    tc.beta_grid_size = detail::size_at(j, "beta_grid_size", tc.beta_grid_size, "train");
    tc.lambda_reg = detail::number_at(j, "lambda_reg", tc.lambda_reg, "train");
    tc.epsilon = detail::number_at(j, "epsilon", tc.epsilon, "train");
    tc.max_iters = detail::size_at(j, "max_iters", tc.max_iters, "train");
    tc.mc_samples = detail::size_at(j, "mc_samples", tc.mc_samples, "train");
    tc.candidate_limit = detail::size_at(j, "candidate_limit", tc.candidate_limit, "train");
    tc.learning_rate = detail::number_at(j, "learning_rate", tc.learning_rate, "train");
    return tc;
}

inline AttackParams parse_attack_params(const json& j) {
    detail::expect_keys(j, {"rnj_delta", "mle_iters", "mle_sigma2"}, "attack");
    AttackParams ap;
    ap.rnj_delta = detail::number_at(j, "rnj_delta", ap.rnj_delta, "attack");
    ap.mle_iters = detail::size_at(j, "mle_iters", ap.mle_iters, "attack");
    ap.mle_sigma2 = detail::number_at(j, "mle_sigma2", ap.mle_sigma2, "attack");
    return ap;
}

inline ExperimentConfig parse_experiment_config(const json& j) {
    detail::expect_keys(j,
                        {"topology", "defenses", "attackers", "noise_sweep", "trials",
                         "rng_seed", "train", "baseline", "attack"},
                        "config");
    if (!j.contains("topology")) throw ConfigInvalid("config.topology is required");

    ExperimentConfig cfg;
    cfg.topology = parse_topology_source(j.at("topology"));
    if (j.contains("defenses"))
        cfg.defenses = detail::string_list_at(j, "defenses", "config", parse_defense);
    if (j.contains("attackers"))
        cfg.attackers = detail::string_list_at(j, "attackers", "config", parse_attack);
    if (j.contains("noise_sweep")) {
        const json& v = j.at("noise_sweep");
        if (!v.is_array() || v.empty())
            throw ConfigInvalid("config.noise_sweep must be a non-empty array of numbers");
        cfg.noise_sweep.clear();
        for (const auto& e : v) {
            if (!e.is_number())
                throw ConfigInvalid("config.noise_sweep must contain only numbers");
            cfg.noise_sweep.push_back(e.get<double>());
        }
    }
    cfg.trials = detail::size_at(j, "trials", cfg.trials, "config");
    cfg.rng_seed = detail::uint_at(j, "rng_seed", cfg.rng_seed, "config");
    if (j.contains("train")) cfg.train = parse_train_config(j.at("train"));
    if (j.contains("baseline")) {
        detail::expect_keys(j.at("baseline"), {"candidate_count"}, "baseline");
        cfg.baseline_candidates =
            detail::size_at(j.at("baseline"), "candidate_count", cfg.baseline_candidates,
                            "baseline");
    }
    if (j.contains("attack")) cfg.attack = parse_attack_params(j.at("attack"));
    validate(cfg);
    return cfg;
}

/// Read and parse a JSON config file.  Missing files are I/O failures; broken
/// JSON is a config error.
inline json load_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config: " + path.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw ConfigInvalid("config is not valid JSON: " + std::string(e.what()));
    }
}

// ---------------------------------------------------------------------------
// Topology and delay-vector file plumbing

inline TreeTopology load_topology(const TopologySource& src) {
    if (!src.file.empty()) {
        std::ifstream is(src.file);
        if (!is) throw IoError("cannot open topology: " + src.file);
        return topology::read_topology(is);
    }
    auto t = topology::random_tree(src.leaves, src.seed, {src.max_fanout});
    if (src.delay_min == 100.0 && src.delay_max == 500.0) return t;
    std::vector<topology::Edge> edges;
    for (const auto& [p, c] : t.links()) {
        double u = (t.link_delay(c) - 100.0) / 400.0;
        edges.push_back({p, c, src.delay_min + u * (src.delay_max - src.delay_min)});
    }
    return topology::build_tree(edges, t.root());
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path.string());
    os << content;
    os.flush();
    if (!os) throw IoError("write failed: " + path.string());
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline void ensure_directory(const std::filesystem::path& dir) {
    if (dir.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

/// Delay-vector text format mirrors the topology files: a "role" line, then
/// one "<a> <b> <delay-ms>" line per leaf pair.  Perturbed vectors are
/// rounded to whole milliseconds on the way out -- defended delays an
/// operator actually deploys are integral -- while true/observed vectors
/// keep full precision.  This is the only place any rounding happens.
inline void write_delay_vector(std::ostream& os, const PathDelayVector& x) {
    os << "role " << topology::role_name(x.role) << "\n";
    char buf[64];
    for (std::size_t i = 0; i < x.values.size(); ++i) {
        if (x.role == DelayRole::Perturbed) {
            std::snprintf(buf, sizeof(buf), "%lld",
                          static_cast<long long>(std::llround(x.values[i])));
        } else {
            std::snprintf(buf, sizeof(buf), "%.17g", x.values[i]);
        }
        os << x.pair_index[i].first << " " << x.pair_index[i].second << " " << buf << "\n";
    }
}

inline PathDelayVector read_delay_vector(std::istream& is) {
    PathDelayVector x;
    std::string line;
    bool have_role = false;
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
        if (!have_role) {
            if (tok.size() != 2 || tok[0] != "role")
                throw ParseError("line " + std::to_string(lineno) + ": expected 'role <name>'");
            if (tok[1] == "true") x.role = DelayRole::True;
            else if (tok[1] == "perturbed") x.role = DelayRole::Perturbed;
            else if (tok[1] == "observed") x.role = DelayRole::Observed;
            else throw ParseError("line " + std::to_string(lineno) + ": unknown role '" + tok[1] + "'");
            have_role = true;
            continue;
        }
        if (tok.size() != 3)
            throw ParseError("line " + std::to_string(lineno) + ": expected '<a> <b> <delay>'");
        double d;
        try {
            std::size_t used = 0;
            d = std::stod(tok[2], &used);
            if (used != tok[2].size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw ParseError("line " + std::to_string(lineno) + ": bad delay '" + tok[2] + "'");
        }
        x.pair_index.emplace_back(tok[0], tok[1]);
        x.values.push_back(d);
    }
    if (!have_role) throw ParseError("missing 'role <name>' line");
    if (x.values.empty()) throw ParseError("delay vector has no entries");
    return x;
}

// ---------------------------------------------------------------------------
// Grid runner

struct ResultRow {
    std::string defense;
    std::string attack;
    double epsilon = 0.0;
    double ted_sim = 0.0;
    double struct_sim = 0.0;
    double link_dist = 0.0;
    std::uint64_t seed = 0;  // the trial's noise seed; shared across cells
};

inline std::string format_csv(const std::vector<ResultRow>& rows) {
    std::string out = "defense,attack,epsilon,ted_sim,struct_sim,link_dist,seed\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f,%.6f,%llu\n",
                      r.defense.c_str(), r.attack.c_str(), r.epsilon, r.ted_sim,
                      r.struct_sim, r.link_dist, static_cast<unsigned long long>(r.seed));
        out += buf;
    }
    return out;
}

namespace detail {

/// A candidate support plus everything the Gibbs attacker reuses per trial:
/// NNLS scorers and per-member metrics against the truth.
struct SupportMetrics {
    TopologySpace space;
    std::vector<double> ted_sim;
    std::vector<double> struct_sim;
    std::vector<double> link_dist;
    std::vector<double> sym_diff;  // attacker's divergence objective
    std::unique_ptr<attackers::SupportEvaluator> eval;
};

inline SupportMetrics build_support_metrics(const TreeTopology& truth, TopologySpace space) {
    SupportMetrics sm;
    sm.space = std::move(space);
    sm.eval = std::make_unique<attackers::SupportEvaluator>(sm.space);
    sm.ted_sim.reserve(sm.space.size());
    for (const auto& m : sm.space.members) {
        auto rep = metrics::metric_report(truth, m);
        sm.ted_sim.push_back(rep.ted_similarity);
        sm.struct_sim.push_back(rep.struct_similarity);
        sm.link_dist.push_back(rep.link_distance);
        sm.sym_diff.push_back(static_cast<double>(metrics::link_symmetric_difference(truth, m)));
    }
    return sm;
}

struct AttackOutcome {
    double ted_sim = 0.0;
    double struct_sim = 0.0;
    double link_dist = 0.0;
};

/// Gibbs rows report posterior-expected metrics at the attacker's best grid
/// beta: the one minimizing expected link symmetric difference, mirroring the
/// adversary the defense is trained against.  Ties go to the smallest beta.
inline AttackOutcome gibbs_outcome(const SupportMetrics& sm, const PathDelayVector& x_star,
                                   const std::vector<double>& grid) {
    auto losses = sm.eval->losses(x_star);
    attackers::GibbsPosterior best;
    double best_dist = std::numeric_limits<double>::infinity();
    for (double beta : grid) {
        auto post = attackers::gibbs_from_losses(losses, sm.space.canonical, beta);
        double expected = 0.0;
        for (std::size_t i = 0; i < post.weights.size(); ++i)
            expected += post.weights[i] * sm.sym_diff[i];
        if (expected < best_dist - 1e-12) {
            best_dist = expected;
            best = std::move(post);
        }
    }
    AttackOutcome out;
    for (std::size_t i = 0; i < best.weights.size(); ++i) {
        out.ted_sim += best.weights[i] * sm.ted_sim[i];
        out.struct_sim += best.weights[i] * sm.struct_sim[i];
        out.link_dist += best.weights[i] * sm.link_dist[i];
    }
    return out;
}

inline AttackOutcome point_outcome(const TreeTopology& truth, const TreeTopology& estimate) {
    auto rep = metrics::metric_report(truth, estimate);
    return {rep.ted_similarity, rep.struct_similarity, rep.link_distance};
}

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() < 2) return {mean, 0.0};
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= static_cast<double>(v.size() - 1);
    return {mean, std::sqrt(var)};
}

}  // namespace detail

struct ExperimentOutput {
    std::vector<ResultRow> rows;
    json summary;
};

/// Run the full defense x attacker x noise grid.
///
/// Seed discipline: each (epsilon index, trial) gets one noise seed derived
/// from the experiment seed alone, so every defense/attacker cell sees the
/// same noise draw and comparisons are paired.  Baseline fakes are drawn per
/// trial (shared across cells), and the trained defense is fit once per run.
/// Writes results.csv and summary.json under out_dir.
inline ExperimentOutput run_experiment(const ExperimentConfig& cfg,
                                       const std::filesystem::path& out_dir) {
    validate(cfg);
    validate(cfg.train);
    auto t = load_topology(cfg.topology);
    const auto x_true = topology::shared_path_vector(t);
    const std::size_t leaves = t.leaves().size();
    const auto grid = defense::beta_grid(cfg.train);

    // Shared candidate support for the Gibbs attacker (exact for l <= 5).
    std::optional<detail::SupportMetrics> shared_support;
    bool gibbs_wanted = std::find(cfg.attackers.begin(), cfg.attackers.end(),
                                  AttackKind::Gibbs) != cfg.attackers.end();
    if (gibbs_wanted && leaves <= 5)
        shared_support =
            detail::build_support_metrics(t, topology::enumerate_topologies(t.leaves()));

    // Train the learned defense once, against the same kind of support.
    std::optional<PathDelayVector> x_roto;
    if (std::find(cfg.defenses.begin(), cfg.defenses.end(), DefenseKind::Roto) !=
        cfg.defenses.end()) {
        auto tc = cfg.train;
        tc.rng_seed = rng::derive(cfg.rng_seed, "train");
        TopologySpace tspace =
            leaves <= 5 ? topology::enumerate_topologies(t.leaves())
                        : attackers::candidate_support(x_true, tc.candidate_limit,
                                                       rng::derive(cfg.rng_seed, "train-support"),
                                                       cfg.attack.rnj_delta);
        auto trained = defense::train(t, tspace, tc);
        x_roto = defense::perturb(trained.params, t);
    }

    auto defended = [&](DefenseKind d, std::size_t trial) -> PathDelayVector {
        switch (d) {
            case DefenseKind::None: return x_true;
            case DefenseKind::Roto: return *x_roto;
            case DefenseKind::Proto:
                return baselines::proto_defense(
                           t, {cfg.baseline_candidates,
                               rng::derive(cfg.rng_seed, "defense-proto", trial)})
                    .xt;
            case DefenseKind::Antitomo:
                return baselines::antitomo_defense(
                           t, {cfg.baseline_candidates,
                               rng::derive(cfg.rng_seed, "defense-antitomo", trial)})
                    .xt;
        }
        throw RuntimeFailure("unreachable defense kind");
    };

    ExperimentOutput out;
    out.rows.reserve(cfg.defenses.size() * cfg.attackers.size() * cfg.noise_sweep.size() *
                     cfg.trials);
    for (DefenseKind d : cfg.defenses) {
        for (AttackKind a : cfg.attackers) {
            for (std::size_t ei = 0; ei < cfg.noise_sweep.size(); ++ei) {
                double eps = cfg.noise_sweep[ei];
                for (std::size_t trial = 0; trial < cfg.trials; ++trial) {
                    std::uint64_t noise_seed = rng::derive(cfg.rng_seed, "noise", ei, trial);
                    auto xt = defended(d, trial);
                    auto x_star = observation::observe(xt, eps, noise_seed);

                    detail::AttackOutcome oc;
                    switch (a) {
                        case AttackKind::Gibbs: {
                            if (shared_support) {
                                oc = detail::gibbs_outcome(*shared_support, x_star, grid);
                            } else {
                                auto sm = detail::build_support_metrics(
                                    t, attackers::candidate_support(
                                           x_star, cfg.train.candidate_limit,
                                           rng::derive(cfg.rng_seed, "support", ei, trial),
                                           cfg.attack.rnj_delta));
                                oc = detail::gibbs_outcome(sm, x_star, grid);
                            }
                            break;
                        }
                        case AttackKind::Rnj: {
                            auto est = attackers::normalize_root_chain(
                                attackers::rnj_infer(x_star, {cfg.attack.rnj_delta}));
                            oc = detail::point_outcome(t, est);
                            break;
                        }
                        case AttackKind::Mle: {
                            attackers::MleConfig mc;
                            mc.iters = cfg.attack.mle_iters;
                            mc.sigma2 = cfg.attack.mle_sigma2;
                            mc.rng_seed = rng::derive(cfg.rng_seed, "mle", ei, trial);
                            oc = detail::point_outcome(t, attackers::mle_infer(x_star, mc).best);
                            break;
                        }
                    }
                    out.rows.push_back({defense_name(d), attack_name(a), eps, oc.ted_sim,
                                        oc.struct_sim, oc.link_dist, noise_seed});
                }
            }
        }
    }

    // Per-cell summary in grid order.  No paths inside: the file must be
    // byte-identical across runs of the same config regardless of out_dir.
    json cells = json::array();
    std::size_t idx = 0;
    for (DefenseKind d : cfg.defenses) {
        for (AttackKind a : cfg.attackers) {
            for (double eps : cfg.noise_sweep) {
                std::vector<double> ted, str, lnk;
                for (std::size_t trial = 0; trial < cfg.trials; ++trial, ++idx) {
                    ted.push_back(out.rows[idx].ted_sim);
                    str.push_back(out.rows[idx].struct_sim);
                    lnk.push_back(out.rows[idx].link_dist);
                }
                auto [tm, ts] = detail::mean_std(ted);
                auto [sm, ss] = detail::mean_std(str);
                auto [lm, ls] = detail::mean_std(lnk);
                cells.push_back({{"defense", defense_name(d)},
                                 {"attack", attack_name(a)},
                                 {"epsilon", eps},
                                 {"trials", cfg.trials},
                                 {"ted_sim", {{"mean", tm}, {"std", ts}}},
                                 {"struct_sim", {{"mean", sm}, {"std", ss}}},
                                 {"link_dist", {{"mean", lm}, {"std", ls}}}});
            }
        }
    }
    out.summary = {{"leaves", leaves},
                   {"trials", cfg.trials},
                   {"rng_seed", cfg.rng_seed},
                   {"truth", topology::canonical_form(t)},
                   {"cells", cells}};

    ensure_directory(out_dir);
    write_text_file(out_dir / "results.csv", format_csv(out.rows));
    write_text_file(out_dir / "summary.json", out.summary.dump(2) + "\n");
    return out;
}

// ---------------------------------------------------------------------------
// Subcommand workers.  Each takes the parsed config and an output directory,
// writes its artifacts, and returns a small JSON report for the CLI to print.

inline json cmd_gen(const json& config, const std::filesystem::path& out_dir) {
    auto src = parse_topology_source(config, /*allow_file=*/false);
    if (src.leaves < 2) throw ConfigInvalid("topology needs at least two leaves");
    if (!(src.delay_min > 0.0) || src.delay_max < src.delay_min)
        throw ConfigInvalid("need 0 < delay_min <= delay_max");
    auto t = load_topology(src);
    ensure_directory(out_dir);
    std::ostringstream ss;
    topology::write_topology(ss, t);
    auto path = out_dir / "topology.txt";
    write_text_file(path, ss.str());
    return {{"path", path.string()},
            {"leaves", t.leaves().size()},
            {"canonical", topology::canonical_form(t)}};
}

namespace detail {

/// Support used for training and the Gibbs attacker in the one-shot
/// subcommands: exact for l <= 5, candidate pool otherwise.
inline TopologySpace subcommand_support(const TreeTopology& t, const PathDelayVector& x,
                                        const defense::TrainConfig& tc,
                                        const AttackParams& ap, std::uint64_t seed) {
    if (t.leaves().size() <= 5) return topology::enumerate_topologies(t.leaves());
    return attackers::candidate_support(x, tc.candidate_limit, seed, ap.rnj_delta);
}

}  // namespace detail

inline json cmd_train(const json& config, const std::filesystem::path& out_dir) {
    detail::expect_keys(config, {"topology", "train", "attack", "rng_seed"}, "config");
    if (!config.contains("topology")) throw ConfigInvalid("config.topology is required");
    auto src = parse_topology_source(config.at("topology"));
    auto tc = config.contains("train") ? parse_train_config(config.at("train"))
                                       : defense::TrainConfig{};
    auto ap = config.contains("attack") ? parse_attack_params(config.at("attack"))
                                        : AttackParams{};
    std::uint64_t seed = detail::uint_at(config, "rng_seed", 0, "config");

    auto t = load_topology(src);
    auto x_true = topology::shared_path_vector(t);
    tc.rng_seed = rng::derive(seed, "train");
    auto space = detail::subcommand_support(t, x_true, tc, ap,
                                            rng::derive(seed, "train-support"));
    auto trained = defense::train(t, space, tc);

    ensure_directory(out_dir);
    auto ckpt = out_dir / "checkpoint.json";
    defense::save_generator(ckpt.string(), trained.params);
    std::ostringstream trace;
    defense::write_trace_csv(trace, trained.trace);
    write_text_file(out_dir / "trace.csv", trace.str());

    json report = {{"checkpoint", ckpt.string()},
                   {"trace", (out_dir / "trace.csv").string()},
                   {"iterations", trained.trace.rows.size()}};
    if (!trained.trace.rows.empty()) {
        report["first_objective"] = trained.trace.rows.front().objective;
        report["final_objective"] = trained.trace.rows.back().objective;
    }
    return report;
}

inline json cmd_attack(const json& config, const std::filesystem::path& out_dir) {
    detail::expect_keys(config,
                        {"topology", "defense", "attacker", "epsilon", "rng_seed",
                         "checkpoint", "attack", "baseline", "train"},
                        "config");
    if (!config.contains("topology")) throw ConfigInvalid("config.topology is required");
    auto src = parse_topology_source(config.at("topology"));
    auto d = parse_defense(detail::string_at(config, "defense", "none", "config"));
    auto a = parse_attack(detail::string_at(config, "attacker", "rnj", "config"));
    double eps = detail::number_at(config, "epsilon", 0.0, "config");
    if (!(eps >= 0.0)) throw ConfigInvalid("config.epsilon must be >= 0");
    std::uint64_t seed = detail::uint_at(config, "rng_seed", 0, "config");
    auto ap = config.contains("attack") ? parse_attack_params(config.at("attack"))
                                        : AttackParams{};
    auto tc = config.contains("train") ? parse_train_config(config.at("train"))
                                       : defense::TrainConfig{};
    std::size_t cand = 8;
    if (config.contains("baseline")) {
        detail::expect_keys(config.at("baseline"), {"candidate_count"}, "baseline");
        cand = detail::size_at(config.at("baseline"), "candidate_count", cand, "baseline");
    }

    auto t = load_topology(src);
    auto x_true = topology::shared_path_vector(t);

    PathDelayVector xt;
    switch (d) {
        case DefenseKind::None: xt = x_true; break;
        case DefenseKind::Roto: {
            auto ckpt = detail::string_at(config, "checkpoint", "", "config");
            if (ckpt.empty())
                throw ConfigInvalid("defense \"roto\" needs a \"checkpoint\" path");
            xt = defense::perturb(defense::load_generator(ckpt), t);
            break;
        }
        case DefenseKind::Proto:
            xt = baselines::proto_defense(t, {cand, rng::derive(seed, "defense-proto", 0)}).xt;
            break;
        case DefenseKind::Antitomo:
            xt = baselines::antitomo_defense(t, {cand, rng::derive(seed, "defense-antitomo", 0)})
                     .xt;
            break;
    }

    ensure_directory(out_dir);
    {
        std::ostringstream ss;
        write_delay_vector(ss, xt);
        write_text_file(out_dir / "perturbed.txt", ss.str());
    }
    auto x_star = observation::observe(xt, eps, rng::derive(seed, "noise", 0, 0));
    {
        std::ostringstream ss;
        write_delay_vector(ss, x_star);
        write_text_file(out_dir / "observed.txt", ss.str());
    }

    TreeTopology est;
    switch (a) {
        case AttackKind::Gibbs: {
            auto space = detail::subcommand_support(t, x_star, tc, ap,
                                                    rng::derive(seed, "support", 0, 0));
            auto post = attackers::gibbs_posterior(x_star, space, 1.0);
            est = space.members[post.map_index];
            break;
        }
        case AttackKind::Rnj:
            est = attackers::normalize_root_chain(attackers::rnj_infer(x_star, {ap.rnj_delta}));
            break;
        case AttackKind::Mle: {
            attackers::MleConfig mc;
            mc.iters = ap.mle_iters;
            mc.sigma2 = ap.mle_sigma2;
            mc.rng_seed = rng::derive(seed, "mle", 0, 0);
            est = attackers::mle_infer(x_star, mc).best;
            break;
        }
    }
    {
        std::ostringstream ss;
        topology::write_topology(ss, est);
        write_text_file(out_dir / "inferred.txt", ss.str());
    }

    auto rep = metrics::metric_report(t, est);
    return {{"defense", defense_name(d)},
            {"attacker", attack_name(a)},
            {"epsilon", eps},
            {"truth", topology::canonical_form(t)},
            {"estimate", topology::canonical_form(est)},
            {"metrics",
             {{"ted_sim", rep.ted_similarity},
              {"struct_sim", rep.struct_similarity},
              {"link_dist", rep.link_distance}}}};
}

inline json cmd_eval(const json& config, const std::filesystem::path& out_dir) {
    detail::expect_keys(config, {"truth", "estimate"}, "config");
    auto truth_path = detail::string_at(config, "truth", "", "config");
    auto est_path = detail::string_at(config, "estimate", "", "config");
    if (truth_path.empty() || est_path.empty())
        throw ConfigInvalid("eval needs \"truth\" and \"estimate\" topology paths");

    auto read_tree = [](const std::string& p) {
        std::ifstream is(p);
        if (!is) throw IoError("cannot open topology: " + p);
        return topology::read_topology(is);
    };
    auto truth = read_tree(truth_path);
    auto est = read_tree(est_path);
    auto rep = metrics::metric_report(truth, est);

    json report = {{"ted_sim", rep.ted_similarity},
                   {"struct_sim", rep.struct_similarity},
                   {"link_dist", rep.link_distance},
                   {"truth", topology::canonical_form(truth)},
                   {"estimate", topology::canonical_form(est)}};
    ensure_directory(out_dir);
    write_text_file(out_dir / "metrics.json", report.dump(2) + "\n");
    return report;
}

inline json cmd_run(const json& config, const std::filesystem::path& out_dir) {
    auto cfg = parse_experiment_config(config);
    auto res = run_experiment(cfg, out_dir);
    json report = res.summary;
    report["results_csv"] = (out_dir / "results.csv").string();
    report["summary_json"] = (out_dir / "summary.json").string();
    return report;
}

/// Estimate the channel's mutual information, the induced Fano ceiling on
/// identification, and an empirical MAP success rate; report whether the
/// observed rate respects the (uncertainty-widened) bound.
inline json cmd_bound(const json& config, const std::filesystem::path& out_dir) {
    detail::expect_keys(config,
                        {"topology", "epsilon", "defense", "checkpoint", "beta",
                         "samples_per_topology", "trials", "quantization", "rng_seed"},
                        "config");
    if (!config.contains("topology")) throw ConfigInvalid("config.topology is required");
    auto src = parse_topology_source(config.at("topology"));
    double eps = detail::number_at(config, "epsilon", 0.1, "config");
    if (!(eps >= 0.0)) throw ConfigInvalid("config.epsilon must be >= 0");
    auto d = parse_defense(detail::string_at(config, "defense", "none", "config"));
    if (d == DefenseKind::Proto || d == DefenseKind::Antitomo)
        throw ConfigInvalid("bound supports defenses \"none\" and \"roto\"");
    double beta = detail::number_at(config, "beta", 1.0, "config");
    if (!(beta > 0.0)) throw ConfigInvalid("config.beta must be > 0");
    std::size_t spt = detail::size_at(config, "samples_per_topology", 400, "config");
    std::size_t trials = detail::size_at(config, "trials", 2000, "config");
    double quant = detail::number_at(config, "quantization", 0.05, "config");
    std::uint64_t seed = detail::uint_at(config, "rng_seed", 0, "config");

    auto t = load_topology(src);
    auto space = topology::enumerate_topologies(t.leaves());

    theory::ChannelSpec ch;
    ch.space = space;
    ch.noise = {eps, 0};
    ch.quantization = quant;
    if (d == DefenseKind::None) {
        ch.defense = [](const TreeTopology& m) { return topology::shared_path_vector(m); };
    } else {
        auto ckpt = detail::string_at(config, "checkpoint", "", "config");
        if (ckpt.empty())
            throw ConfigInvalid("defense \"roto\" needs a \"checkpoint\" path");
        auto params = std::make_shared<defense::GeneratorParams>(defense::load_generator(ckpt));
        ch.defense = [params](const TreeTopology& m) { return defense::perturb(*params, m); };
    }

    auto mi = theory::mutual_information(ch, spt, rng::derive(seed, "mi"));
    double ceiling = theory::fano_bound(mi.mi_bits + 2.0 * mi.stderr_bits, space.size());

    auto eval = std::make_shared<attackers::SupportEvaluator>(space);
    auto canonical = space.canonical;
    auto members = space.members;
    auto attacker = [eval, canonical, members, beta](const PathDelayVector& x_star) {
        auto post = attackers::gibbs_from_losses(eval->losses(x_star), canonical, beta);
        return members[post.map_index];
    };
    auto succ = theory::empirical_success_probability(ch, attacker, trials,
                                                      rng::derive(seed, "succ"));

    json report = {{"space_size", space.size()},
                   {"epsilon", eps},
                   {"defense", defense_name(d)},
                   {"beta", beta},
                   {"mi_bits", mi.mi_bits},
                   {"mi_stderr", mi.stderr_bits},
                   {"fano_bound", ceiling},
                   {"success",
                    {{"p_hat", succ.p_hat},
                     {"ci_low", succ.ci_low},
                     {"ci_high", succ.ci_high},
                     {"trials", succ.trials}}},
                   {"holds", succ.p_hat <= ceiling}};
    ensure_directory(out_dir);
    write_text_file(out_dir / "bound.json", report.dump(2) + "\n");
    return report;
}

}  // namespace tomoguard::harness
