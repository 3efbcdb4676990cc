#include <catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "tomoguard/defense.hpp"
#include "tomoguard/metrics.hpp"
#include "tomoguard/observation.hpp"
#include "tomoguard/rng.hpp"
#include "tomoguard/topology.hpp"

using namespace tomoguard;
using namespace tomoguard::topology;
using namespace tomoguard::defense;

namespace {

TreeTopology fixture3() {
    return build_tree({{"s", "u", 2.0}, {"u", "v1", 1.0}, {"u", "v2", 1.0}, {"s", "v3", 3.0}},
                      "s");
}

TreeTopology fixture4() {
    return build_tree({{"s", "u", 100.0},
                       {"u", "v1", 1.0},
                       {"u", "v2", 1.0},
                       {"s", "w", 150.0},
                       {"w", "v3", 1.0},
                       {"w", "v4", 1.0}},
                      "s");
}

double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }

// Hand-set single-layer generator on 4 hidden units:
//   message net: picks the sender embedding (weights [I | 0 | 0], zero bias)
//   update  net: adds the aggregated message to the state ([I | I])
//   readout: first coordinate of the elementwise-sum half, scale 1
GeneratorParams tiny_generator() {
    GeneratorParams g;
    g.layers = 1;
    g.hidden_dim = 4;
    g.softplus_scale = 1.0;
    g.msg_nets.push_back(neuralcore::zero_params({11, 4}, {neuralcore::Activation::Relu}));
    for (int i = 0; i < 4; ++i) g.msg_nets[0].layers[0].weights[i][i] = 1.0;
    g.update_nets.push_back(neuralcore::zero_params({8, 4}, {neuralcore::Activation::Relu}));
    for (int i = 0; i < 4; ++i) {
        g.update_nets[0].layers[0].weights[i][i] = 1.0;
        g.update_nets[0].layers[0].weights[i][4 + i] = 1.0;
    }
    g.readout_net = neuralcore::zero_params({8, 1}, {neuralcore::Activation::Identity});
    g.readout_net.layers[0].weights[0][0] = 1.0;
    g.internal_embedding_table["root"] = {0.1, 0.1, 0.1, 0.1};
    g.internal_embedding_table["depth1"] = {0.2, 0.2, 0.2, 0.2};
    g.internal_embedding_table["deep"] = {0.3, 0.3, 0.3, 0.3};
    return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// Initialization and features

TEST_CASE("generator initialization has consistent shapes and a zero head", "[defense]") {
    auto g = init_generator(7);
    CHECK(g.layers == 3);
    CHECK(g.hidden_dim == 32);
    REQUIRE(g.msg_nets.size() == 3);
    REQUIRE(g.update_nets.size() == 3);
    CHECK(g.msg_nets[0].in_dim() == 67);
    CHECK(g.msg_nets[0].out_dim() == 32);
    CHECK(g.update_nets[0].in_dim() == 64);
    CHECK(g.readout_net.in_dim() == 64);
    CHECK(g.readout_net.out_dim() == 1);
    for (const auto& row : g.readout_net.layers[0].weights)
        for (double w : row) CHECK(w == 0.0);

    auto g2 = init_generator(7);
    CHECK(generator_params_flat(g).values == generator_params_flat(g2).values);
    auto g3 = init_generator(8);
    CHECK(generator_params_flat(g).values != generator_params_flat(g3).values);
}

TEST_CASE("leaf features are one-hot and internal nodes use role embeddings", "[defense]") {
    auto g = init_generator(1);
    auto t = fixture3();
    auto h = node_features(g, t);
    REQUIRE(h.at("v2").size() == 32);
    for (std::size_t i = 0; i < 32; ++i) CHECK(h.at("v2")[i] == (i == 1 ? 1.0 : 0.0));
    CHECK(h.at("s") == g.internal_embedding_table.at("root"));
    CHECK(h.at("u") == g.internal_embedding_table.at("depth1"));

    // Same tree, same features.
    CHECK(node_features(g, fixture3()) == h);
}

TEST_CASE("a leaf set wider than the hidden dimension is rejected", "[defense]") {
    auto g = init_generator(0, 3, 4);
    auto t = random_tree(5, 12);
    CHECK_THROWS_AS(node_features(g, t), LeafCountExceedsDim);
}

TEST_CASE("edge features expose delay, subtree leaf count and hop depth", "[defense]") {
    auto t = fixture3();
    auto e = edge_features(t, "u");
    CHECK(e[0] == Catch::Approx(2.0 / 500.0));
    CHECK(e[1] == 2.0);  // leaves below the root-adjacent internal node
    CHECK(e[2] == 1.0);
    auto el = edge_features(t, "v3");
    CHECK(el[0] == Catch::Approx(3.0 / 500.0));
    CHECK(el[1] == 1.0);
}

// ---------------------------------------------------------------------------
// Forward pass

TEST_CASE("zero-initialized generator perturbs nothing", "[defense]") {
    for (int rep = 0; rep < 20; ++rep) {
        auto t = random_tree(3 + rep % 6, rng::derive(40, "ident", rep));
        auto g = init_generator(rng::derive(41, "ident-g", rep));
        auto xt = perturb(g, t);
        auto x = shared_path_vector(t);
        REQUIRE(xt.values == x.values);  // bitwise: the head contributes exactly 0
        CHECK(xt.pair_index == x.pair_index);
        CHECK(xt.role == DelayRole::Perturbed);
    }
}

TEST_CASE("hand-traced single-layer forward pass matches", "[defense]") {
    // Upward sweep: h_u = (0.7,0.7,0.2,0.2), h_s = (0.45,0.45,0.7,0.2).
    // Downward:    h_u = (1.15,1.15,0.9,0.4), h_v1 = (2.15,1.15,0.9,0.4),
    //              h_v2 = (1.15,2.15,0.9,0.4), h_v3 = (0.45,0.45,1.7,0.2).
    // Raw pair scores (first coordinate of the sums): 3.3, 2.6, 1.6.
    auto g = tiny_generator();
    auto t = fixture3();
    auto xt = perturb(g, t);
    const double base = softplus(0.0);
    CHECK(xt.values[0] == Catch::Approx(2.0 + softplus(3.3) - base).margin(1e-12));
    CHECK(xt.values[1] == Catch::Approx(softplus(2.6) - base).margin(1e-12));
    CHECK(xt.values[2] == Catch::Approx(softplus(1.6) - base).margin(1e-12));
}

TEST_CASE("pair readout is symmetric in its arguments", "[defense]") {
    auto g = init_generator(5);
    g.readout_net = neuralcore::init_params({64, 1}, {neuralcore::Activation::Identity},
                                            rng::derive(5, "head"));
    auto t = random_tree(5, 99);
    auto h = node_embeddings(g, t);
    const auto& leaves = t.leaves();
    for (std::size_t i = 0; i < leaves.size(); ++i)
        for (std::size_t j = i + 1; j < leaves.size(); ++j)
            CHECK(pair_raw_score(g, h, leaves[i], leaves[j]) ==
                  pair_raw_score(g, h, leaves[j], leaves[i]));
}

TEST_CASE("perturbed outputs stay nonnegative with an active head", "[defense]") {
    for (int rep = 0; rep < 10; ++rep) {
        auto g = init_generator(rng::derive(60, "nn", rep));
        g.readout_net = neuralcore::init_params({64, 1}, {neuralcore::Activation::Identity},
                                                rng::derive(61, "nn-head", rep));
        // Push the head negative so the clamp actually engages sometimes.
        g.readout_net.layers[0].bias[0] = -3.0;
        auto t = random_tree(4 + rep % 3, rng::derive(62, "nn-tree", rep));
        auto xt = perturb(g, t);
        for (double v : xt.values) {
            REQUIRE(std::isfinite(v));
            REQUIRE(v >= 0.0);
        }
    }
}

// ---------------------------------------------------------------------------
// Regularization

TEST_CASE("regularization is the squared Euclidean deviation", "[defense]") {
    auto t = fixture3();
    auto x = shared_path_vector(t);
    CHECK(regularization(x, x) == 0.0);

    auto xt = x;
    xt.values[0] += 3.0;
    xt.values[1] += 4.0;
    CHECK(regularization(xt, x) == Catch::Approx(25.0));

    auto eng = rng::engine(rng::derive(70, "reg"));
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    auto yt = x;
    double want = 0.0;
    for (auto& v : yt.values) {
        double d = u(eng);
        v += d;
        want += d * d;
    }
    CHECK(regularization(yt, x) == Catch::Approx(want).margin(1e-9));

    PathDelayVector other;
    other.values = {1.0};
    other.pair_index = {{"a", "b"}};
    CHECK_THROWS_AS(regularization(other, x), DimensionMismatch);
}

// ---------------------------------------------------------------------------
// Structural loss and the attacker step

TEST_CASE("structural loss on a single-member space is zero", "[defense]") {
    auto t = fixture3();
    TopologySpace solo;
    solo.leaf_set = t.leaves();
    solo.members = {t};
    solo.canonical = {canonical_form(t)};
    TrainConfig cfg;
    CHECK(structural_loss(init_generator(0), 1.0, t, solo, cfg) == 0.0);
}

TEST_CASE("structural loss at beta=0 is minus the mean support distance", "[defense]") {
    auto t = fixture3();
    auto space = enumerate_topologies(t.leaves());
    TrainConfig cfg;
    cfg.epsilon = 0.0;
    double mean_d = 0.0;
    for (const auto& m : space.members)
        mean_d += static_cast<double>(metrics::link_symmetric_difference(t, m));
    mean_d /= static_cast<double>(space.size());
    CHECK(structural_loss(init_generator(0), 0.0, t, space, cfg) ==
          Catch::Approx(-mean_d).margin(1e-12));
}

TEST_CASE("structural loss matches a scripted posterior expectation", "[defense]") {
    auto t = fixture3();
    auto space = enumerate_topologies(t.leaves());
    TrainConfig cfg;
    cfg.epsilon = 0.0;

    // Noiseless zero-init channel: X* = X = (2,0,0); candidate losses are
    // (4, 0, 4, 4) and distances (1, 0, 2, 2) in canonical member order.
    double beta = 1.0;
    std::vector<double> losses = {4.0, 0.0, 4.0, 4.0};
    std::vector<double> dist;
    for (const auto& m : space.members)
        dist.push_back(static_cast<double>(metrics::link_symmetric_difference(t, m)));
    REQUIRE(dist == std::vector<double>{1.0, 0.0, 2.0, 2.0});
    double z = 0.0, e = 0.0;
    for (std::size_t i = 0; i < losses.size(); ++i) {
        double w = std::exp(-beta * losses[i]);
        z += w;
        e += w * dist[i];
    }
    double want = -(e / z);

    CHECK(structural_loss(init_generator(3), beta, t, space, cfg) ==
          Catch::Approx(want).margin(1e-12));
}

TEST_CASE("structural loss requires a nonempty space", "[defense]") {
    TopologySpace empty;
    TrainConfig cfg;
    CHECK_THROWS_AS(structural_loss(init_generator(0), 1.0, fixture3(), empty, cfg),
                    EmptySpace);
    CHECK_THROWS_AS(select_worst_beta(init_generator(0), fixture3(), empty, cfg), EmptySpace);
}

TEST_CASE("beta grid is linear and inclusive of both ends", "[defense]") {
    TrainConfig cfg;
    auto grid = beta_grid(cfg);
    REQUIRE(grid.size() == 8);
    CHECK(grid.front() == Catch::Approx(0.1));
    CHECK(grid.back() == Catch::Approx(2.0));
    for (std::size_t i = 1; i < grid.size(); ++i)
        CHECK(grid[i] - grid[i - 1] == Catch::Approx(1.9 / 7.0).margin(1e-12));

    cfg.beta_grid_size = 1;
    CHECK(beta_grid(cfg) == std::vector<double>{0.1});

    cfg.beta_min = 2.0;
    cfg.beta_max = 1.0;
    CHECK_THROWS_AS(beta_grid(cfg), InvariantViolation);
}

TEST_CASE("worst beta degenerates to beta_min on ties and singleton grids", "[defense]") {
    auto t = fixture3();
    TopologySpace solo;
    solo.leaf_set = t.leaves();
    solo.members = {t};
    solo.canonical = {canonical_form(t)};

    TrainConfig cfg;
    // Constant-in-beta loss: tie resolves to the smallest grid point.
    CHECK(select_worst_beta(init_generator(0), t, solo, cfg) == Catch::Approx(0.1));

    cfg.beta_grid_size = 1;
    cfg.beta_min = cfg.beta_max = 0.7;
    auto space = enumerate_topologies(t.leaves());
    CHECK(select_worst_beta(init_generator(0), t, space, cfg) == Catch::Approx(0.7));
}

TEST_CASE("worst beta agrees with exhaustive noiseless re-evaluation", "[defense]") {
    auto t = fixture4();
    auto space = enumerate_topologies(t.leaves());
    TrainConfig cfg;
    cfg.epsilon = 0.0;
    auto g = init_generator(9);
    g.readout_net = neuralcore::init_params({64, 1}, {neuralcore::Activation::Identity},
                                            rng::derive(9, "head2"));

    double got = select_worst_beta(g, t, space, cfg);
    double best = -1e300, best_beta = 0.0;
    for (double beta : beta_grid(cfg)) {
        double v = structural_loss(g, beta, t, space, cfg);
        if (v > best) {
            best = v;
            best_beta = beta;
        }
    }
    CHECK(got == Catch::Approx(best_beta));
}

// ---------------------------------------------------------------------------
// Training

TEST_CASE("zero-iteration training returns the initial parameters", "[defense]") {
    auto t = fixture3();
    auto space = enumerate_topologies(t.leaves());
    TrainConfig cfg;
    cfg.max_iters = 0;
    cfg.rng_seed = 4;
    auto res = train(t, space, cfg);
    CHECK(res.trace.rows.empty());
    auto expect = init_generator(rng::derive(4, "init"));
    CHECK(generator_params_flat(res.params).values == generator_params_flat(expect).values);
}

TEST_CASE("training is reproducible bit for bit", "[defense]") {
    auto t = fixture3();
    auto space = enumerate_topologies(t.leaves());
    TrainConfig cfg;
    cfg.max_iters = 6;
    cfg.rng_seed = 21;
    auto a = train(t, space, cfg);
    auto b = train(t, space, cfg);
    REQUIRE(a.trace.rows.size() == 6);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(a.trace.rows[i].beta_star == b.trace.rows[i].beta_star);
        CHECK(a.trace.rows[i].objective == b.trace.rows[i].objective);
        CHECK(a.trace.rows[i].reg == b.trace.rows[i].reg);
    }
    CHECK(generator_params_flat(a.params).values == generator_params_flat(b.params).values);
}

TEST_CASE("an overwhelming regularizer pins the output to the true vector", "[defense]") {
    auto t = fixture3();
    auto space = enumerate_topologies(t.leaves());
    TrainConfig cfg;
    cfg.lambda_reg = 1e6;
    cfg.max_iters = 30;
    cfg.rng_seed = 13;
    auto res = train(t, space, cfg);
    auto xt = perturb(res.params, t);
    auto x = shared_path_vector(t);
    for (std::size_t i = 0; i < x.values.size(); ++i)
        CHECK(std::abs(xt.values[i] - x.values[i]) <= 1e-2);
}

TEST_CASE("training strictly improves the worst-case expected divergence", "[defense]") {
    // Millisecond-scale delays with a trifurcation: the posterior is sensitive
    // to perturbations the regularizer can still afford.
    auto t = build_tree({{"s", "u", 1.5},
                         {"u", "v1", 1.0},
                         {"u", "v2", 1.0},
                         {"u", "v3", 1.0},
                         {"s", "v4", 2.0}},
                        "s");
    auto space = enumerate_topologies(t.leaves());
    TrainConfig cfg;
    cfg.max_iters = 100;
    cfg.rng_seed = 7;

    // Independent-seed evaluation of the attacker-optimal expected divergence.
    auto eval_divergence = [&](const GeneratorParams& g) {
        defense::detail::SupportContext ctx(t, space);
        auto eval_cfg = cfg;
        eval_cfg.mc_samples = 48;
        auto losses =
            defense::detail::sample_losses(g, t, ctx, eval_cfg, rng::derive(1234, "eval-mc"));
        double best = -1e300;
        for (double beta : beta_grid(cfg))
            best = std::max(best,
                            defense::detail::neg_expected_divergence(losses, ctx.dist, beta));
        return -best;  // smallest achievable divergence across the grid
    };

    auto res = train(t, space, cfg);
    double before = eval_divergence(init_generator(rng::derive(cfg.rng_seed, "init")));
    double after = eval_divergence(res.params);
    CHECK(after > before);

    REQUIRE(res.trace.rows.size() == 100);
    for (const auto& r : res.trace.rows) {
        CHECK(std::isfinite(r.objective));
        CHECK(r.reg >= 0.0);
        CHECK(r.beta_star >= cfg.beta_min);
        CHECK(r.beta_star <= cfg.beta_max);
    }

    // Smoothed objective trend: soft check, surfaced as a warning only.
    auto smooth = [&](std::size_t end) {
        double s = 0.0;
        for (std::size_t i = end - 10; i < end; ++i) s += res.trace.rows[i].objective;
        return s / 10.0;
    };
    double worst_rise = 0.0;
    for (std::size_t end = 20; end <= res.trace.rows.size(); end += 10) {
        double prev = smooth(end - 10), cur = smooth(end);
        double scale = std::max({std::abs(prev), std::abs(cur), 1e-9});
        worst_rise = std::max(worst_rise, (cur - prev) / scale);
    }
    if (worst_rise > 0.05)
        WARN("smoothed objective rose by " << worst_rise * 100.0 << "% in one window");
}

TEST_CASE("trace CSV uses the documented header and layout", "[defense]") {
    TrainingTrace trace;
    trace.rows.push_back({0, 0.1, -1.25, 0.0});
    trace.rows.push_back({1, 2.0, -1.5, 12.25});
    std::ostringstream os;
    write_trace_csv(os, trace);
    CHECK(os.str() ==
          "iter,beta_star,objective,reg\n"
          "0,0.100000,-1.250000,0.000000\n"
          "1,2.000000,-1.500000,12.250000\n");
}

TEST_CASE("checkpoints round-trip the generator exactly", "[defense]") {
    auto g = init_generator(31);
    g.readout_net = neuralcore::init_params({64, 1}, {neuralcore::Activation::Identity},
                                            rng::derive(31, "head3"));
    std::string path = "/tmp/tomoguard_test_generator.ckpt";
    save_generator(path, g);
    auto back = load_generator(path);
    CHECK(generator_params_flat(back).values == generator_params_flat(g).values);
    std::remove(path.c_str());
}

TEST_CASE("training config validation rejects bad ranges", "[defense]") {
    auto t = fixture3();
    auto space = enumerate_topologies(t.leaves());
    TrainConfig cfg;
    cfg.beta_min = 0.0;
    CHECK_THROWS_AS(train(t, space, cfg), InvariantViolation);
    cfg = {};
    cfg.mc_samples = 0;
    CHECK_THROWS_AS(train(t, space, cfg), InvariantViolation);
    cfg = {};
    CHECK_THROWS_AS(train(t, TopologySpace{}, cfg), EmptySpace);
}
