#include <catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "tomoguard/harness.hpp"

using namespace tomoguard;
using namespace tomoguard::harness;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("tomoguard_harness_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Millisecond-scale tree with a trifurcation: small enough loss gaps that
// perturbations actually move posteriors, so defenses have something to do.
void write_ms_fixture(const fs::path& path) {
    std::ofstream os(path);
    os << "root s\n"
       << "s u 1.5\n"
       << "u v1 1.0\n"
       << "u v2 1.0\n"
       << "u v3 1.0\n"
       << "s v4 2.0\n";
}

json base_config() {
    return json{{"topology", {{"leaves", 4}, {"seed", 11}}},
                {"defenses", {"none", "proto"}},
                {"attackers", {"gibbs", "rnj"}},
                {"noise_sweep", {0.0, 0.05, 0.1}},
                {"trials", 5},
                {"rng_seed", 42}};
}

}  // namespace

TEST_CASE("experiment config parses the documented schema", "[harness]") {
    json j = base_config();
    j["train"] = {{"max_iters", 30}, {"mc_samples", 4}, {"lambda_reg", 0.2}};
    j["baseline"] = {{"candidate_count", 4}};
    j["attack"] = {{"rnj_delta", 0.5}, {"mle_iters", 500}};

    auto cfg = parse_experiment_config(j);
    CHECK(cfg.topology.leaves == 4);
    CHECK(cfg.topology.seed == 11);
    REQUIRE(cfg.defenses.size() == 2);
    CHECK(cfg.defenses[0] == DefenseKind::None);
    CHECK(cfg.defenses[1] == DefenseKind::Proto);
    REQUIRE(cfg.attackers.size() == 2);
    CHECK(cfg.attackers[0] == AttackKind::Gibbs);
    CHECK(cfg.noise_sweep == std::vector<double>{0.0, 0.05, 0.1});
    CHECK(cfg.trials == 5);
    CHECK(cfg.rng_seed == 42);
    CHECK(cfg.train.max_iters == 30);
    CHECK(cfg.train.mc_samples == 4);
    CHECK(cfg.train.lambda_reg == Catch::Approx(0.2));
    CHECK(cfg.baseline_candidates == 4);
    CHECK(cfg.attack.rnj_delta == Catch::Approx(0.5));
    CHECK(cfg.attack.mle_iters == 500);
    // Untouched knobs keep their defaults.
    CHECK(cfg.train.beta_grid_size == 8);
    CHECK(cfg.attack.mle_sigma2 == Catch::Approx(1.0));
}

TEST_CASE("unknown config keys fail fast", "[harness]") {
    auto top = base_config();
    top["trails"] = 7;  // typo for trials
    CHECK_THROWS_AS(parse_experiment_config(top), ConfigInvalid);

    auto nested = base_config();
    nested["train"] = {{"max_iter", 5}};  // typo for max_iters
    CHECK_THROWS_AS(parse_experiment_config(nested), ConfigInvalid);

    auto topo = base_config();
    topo["topology"]["leafs"] = 3;
    CHECK_THROWS_AS(parse_experiment_config(topo), ConfigInvalid);

    auto base = base_config();
    base["baseline"] = {{"candidates", 4}};
    CHECK_THROWS_AS(parse_experiment_config(base), ConfigInvalid);
}

TEST_CASE("malformed config values are rejected", "[harness]") {
    auto missing_topology = base_config();
    missing_topology.erase("topology");
    CHECK_THROWS_AS(parse_experiment_config(missing_topology), ConfigInvalid);

    auto bad_defense = base_config();
    bad_defense["defenses"] = {"nnoe"};
    CHECK_THROWS_AS(parse_experiment_config(bad_defense), ConfigInvalid);

    auto empty_sweep = base_config();
    empty_sweep["noise_sweep"] = json::array();
    CHECK_THROWS_AS(parse_experiment_config(empty_sweep), ConfigInvalid);

    auto negative_eps = base_config();
    negative_eps["noise_sweep"] = {-0.1};
    CHECK_THROWS_AS(parse_experiment_config(negative_eps), ConfigInvalid);

    auto zero_trials = base_config();
    zero_trials["trials"] = 0;
    CHECK_THROWS_AS(parse_experiment_config(zero_trials), ConfigInvalid);

    auto wrong_type = base_config();
    wrong_type["trials"] = "five";
    CHECK_THROWS_AS(parse_experiment_config(wrong_type), ConfigInvalid);

    auto negative_seed = base_config();
    negative_seed["rng_seed"] = -3;
    CHECK_THROWS_AS(parse_experiment_config(negative_seed), ConfigInvalid);

    auto file_and_gen = base_config();
    file_and_gen["topology"] = {{"file", "t.txt"}, {"leaves", 4}};
    CHECK_THROWS_AS(parse_experiment_config(file_and_gen), ConfigInvalid);
}

TEST_CASE("config loading distinguishes io from parse failures", "[harness]") {
    CHECK_THROWS_AS(load_json("/nonexistent/dir/config.json"), IoError);

    auto dir = fresh_dir("badjson");
    write_text_file(dir / "c.json", "{\"trials\": }");
    CHECK_THROWS_AS(load_json(dir / "c.json"), ConfigInvalid);

    write_text_file(dir / "ok.json", "{\"trials\": 3}");
    auto j = load_json(dir / "ok.json");
    CHECK(j.at("trials") == 3);
}

TEST_CASE("delay vector files quantize perturbed values only", "[harness]") {
    PathDelayVector x;
    x.role = DelayRole::Perturbed;
    x.pair_index = {{"v1", "v2"}, {"v1", "v3"}, {"v2", "v3"}};
    x.values = {101.4, 250.5, 0.2};

    std::ostringstream ss;
    write_delay_vector(ss, x);
    std::string text = ss.str();
    CHECK(text.find("role perturbed") == 0);
    CHECK(text.find("101.4") == std::string::npos);  // rounded away
    CHECK(text.find("v1 v2 101\n") != std::string::npos);
    CHECK(text.find("v1 v3 251\n") != std::string::npos);  // .5 rounds up
    CHECK(text.find("v2 v3 0\n") != std::string::npos);

    std::istringstream in(text);
    auto back = read_delay_vector(in);
    CHECK(back.role == DelayRole::Perturbed);
    CHECK(back.values == std::vector<double>{101.0, 251.0, 0.0});
    CHECK(back.pair_index == x.pair_index);

    // True-role vectors keep full precision.
    x.role = DelayRole::True;
    std::ostringstream ss2;
    write_delay_vector(ss2, x);
    std::istringstream in2(ss2.str());
    auto exact = read_delay_vector(in2);
    CHECK(exact.role == DelayRole::True);
    CHECK(exact.values == x.values);

    std::istringstream norole("v1 v2 3.0\n");
    CHECK_THROWS_AS(read_delay_vector(norole), ParseError);
    std::istringstream badrole("role wobbly\nv1 v2 3.0\n");
    CHECK_THROWS_AS(read_delay_vector(badrole), ParseError);
    std::istringstream badval("role true\nv1 v2 fast\n");
    CHECK_THROWS_AS(read_delay_vector(badval), ParseError);
}

TEST_CASE("generated topologies respect the requested delay window", "[harness]") {
    TopologySource src;
    src.leaves = 5;
    src.seed = 3;
    src.delay_min = 1.0;
    src.delay_max = 4.0;
    auto t = load_topology(src);
    CHECK(t.leaves().size() == 5);
    for (const auto& [p, c] : t.links()) {
        CHECK(t.link_delay(c) >= 1.0);
        CHECK(t.link_delay(c) <= 4.0);
    }

    // Defaults reproduce the plain generator, structure and delays alike.
    TopologySource plain;
    plain.leaves = 5;
    plain.seed = 3;
    auto u = load_topology(plain);
    auto direct = topology::random_tree(std::size_t{5}, 3);
    CHECK(topology::canonical_form(u) == topology::canonical_form(direct));
    CHECK(topology::canonical_form(t) == topology::canonical_form(direct));
}

TEST_CASE("grid runner emits one row per cell and trial, in order", "[harness]") {
    auto dir = fresh_dir("grid");
    auto cfg = parse_experiment_config(base_config());
    auto out = run_experiment(cfg, dir);

    REQUIRE(out.rows.size() == 2 * 2 * 3 * 5);
    std::size_t idx = 0;
    for (const char* d : {"none", "proto"}) {
        for (const char* a : {"gibbs", "rnj"}) {
            for (double eps : {0.0, 0.05, 0.1}) {
                for (std::size_t trial = 0; trial < 5; ++trial, ++idx) {
                    const auto& r = out.rows[idx];
                    CHECK(r.defense == d);
                    CHECK(r.attack == a);
                    CHECK(r.epsilon == eps);
                    CHECK(r.ted_sim >= 0.0);
                    CHECK(r.ted_sim <= 1.0);
                    CHECK(r.struct_sim >= 0.0);
                    CHECK(r.struct_sim <= 1.0);
                    CHECK(r.link_dist >= 0.0);
                    CHECK(r.link_dist <= 1.0);
                    // Paired design: the noise seed depends only on (eps, trial).
                    CHECK(r.seed == out.rows[(idx % (3 * 5)) + 0 * 15].seed);
                }
            }
        }
    }

    auto csv = read_text_file(dir / "results.csv");
    CHECK(csv.rfind("defense,attack,epsilon,ted_sim,struct_sim,link_dist,seed\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 61);  // header + 60 rows

    // Undefended noiseless RNJ recovers the generator tree exactly.
    for (std::size_t trial = 0; trial < 5; ++trial) {
        const auto& r = out.rows[1 * 15 + 0 * 5 + trial];  // none/rnj/eps=0
        CHECK(r.ted_sim == 1.0);
        CHECK(r.struct_sim == 1.0);
        CHECK(r.link_dist == 0.0);
    }
}

TEST_CASE("summary statistics match the emitted rows", "[harness]") {
    auto dir = fresh_dir("summary");
    json j = base_config();
    j["defenses"] = {"none"};
    j["attackers"] = {"rnj"};
    j["noise_sweep"] = {0.1};
    j["trials"] = 4;
    auto out = run_experiment(parse_experiment_config(j), dir);

    REQUIRE(out.rows.size() == 4);
    double mean = 0.0;
    for (const auto& r : out.rows) mean += r.link_dist;
    mean /= 4.0;
    double var = 0.0;
    for (const auto& r : out.rows) var += (r.link_dist - mean) * (r.link_dist - mean);
    var /= 3.0;

    REQUIRE(out.summary.at("cells").size() == 1);
    const auto& cell = out.summary.at("cells").at(0);
    CHECK(cell.at("defense") == "none");
    CHECK(cell.at("attack") == "rnj");
    CHECK(cell.at("trials") == 4);
    CHECK(cell.at("link_dist").at("mean").get<double>() == Catch::Approx(mean).margin(1e-12));
    CHECK(cell.at("link_dist").at("std").get<double>() ==
          Catch::Approx(std::sqrt(var)).margin(1e-12));

    auto on_disk = load_json(dir / "summary.json");
    CHECK(on_disk == out.summary);
}

TEST_CASE("identical configs reproduce byte-identical outputs", "[harness]") {
    auto dir1 = fresh_dir("rerun_a");
    auto dir2 = fresh_dir("rerun_b");
    json j = base_config();
    j["defenses"] = {"none", "antitomo"};
    j["attackers"] = {"rnj", "gibbs"};
    j["noise_sweep"] = {0.0, 0.1};
    j["trials"] = 3;

    run_experiment(parse_experiment_config(j), dir1);
    run_experiment(parse_experiment_config(j), dir2);

    CHECK(read_text_file(dir1 / "results.csv") == read_text_file(dir2 / "results.csv"));
    CHECK(read_text_file(dir1 / "summary.json") == read_text_file(dir2 / "summary.json"));

    // A different seed actually changes the noisy cells.
    auto dir3 = fresh_dir("rerun_c");
    j["rng_seed"] = 43;
    run_experiment(parse_experiment_config(j), dir3);
    CHECK(read_text_file(dir1 / "results.csv") != read_text_file(dir3 / "results.csv"));
}

TEST_CASE("gen worker writes a loadable topology", "[harness]") {
    auto dir = fresh_dir("gen");
    json j = {{"leaves", 4}, {"seed", 9}, {"delay_min", 1.0}, {"delay_max", 3.0}};
    auto report = cmd_gen(j, dir);
    CHECK(report.at("leaves") == 4);

    std::ifstream is(dir / "topology.txt");
    REQUIRE(is.good());
    auto t = topology::read_topology(is);
    CHECK(topology::canonical_form(t) == report.at("canonical").get<std::string>());
    for (const auto& [p, c] : t.links()) CHECK(t.link_delay(c) <= 3.0);

    json with_file = {{"file", "x.txt"}};
    CHECK_THROWS_AS(cmd_gen(with_file, dir), ConfigInvalid);
    json too_small = {{"leaves", 1}};
    CHECK_THROWS_AS(cmd_gen(too_small, dir), ConfigInvalid);
}

TEST_CASE("eval worker scores a pair of topology files", "[harness]") {
    auto dir = fresh_dir("eval");
    write_ms_fixture(dir / "truth.txt");
    write_ms_fixture(dir / "same.txt");

    json j = {{"truth", (dir / "truth.txt").string()}, {"estimate", (dir / "same.txt").string()}};
    auto report = cmd_eval(j, dir);
    CHECK(report.at("ted_sim") == 1.0);
    CHECK(report.at("struct_sim") == 1.0);
    CHECK(report.at("link_dist") == 0.0);
    CHECK(fs::exists(dir / "metrics.json"));

    json missing = {{"truth", (dir / "nope.txt").string()},
                    {"estimate", (dir / "same.txt").string()}};
    CHECK_THROWS_AS(cmd_eval(missing, dir), IoError);
}

TEST_CASE("attack worker runs the full pipeline and writes artifacts", "[harness]") {
    auto dir = fresh_dir("attack");
    write_ms_fixture(dir / "truth.txt");

    json j = {{"topology", {{"file", (dir / "truth.txt").string()}}},
              {"defense", "none"},
              {"attacker", "rnj"},
              {"epsilon", 0.0},
              {"rng_seed", 5}};
    auto report = cmd_attack(j, dir);
    CHECK(report.at("estimate") == report.at("truth"));
    CHECK(report.at("metrics").at("link_dist") == 0.0);

    // Undefended vector goes out at full precision under the true role.
    auto perturbed = read_text_file(dir / "perturbed.txt");
    CHECK(perturbed.rfind("role true", 0) == 0);
    CHECK(perturbed.find("1.5") != std::string::npos);  // sibling pairs share s->u

    std::ifstream inferred(dir / "inferred.txt");
    auto est = topology::read_topology(inferred);
    CHECK(topology::canonical_form(est) == report.at("truth").get<std::string>());

    // A baseline defense emits integral perturbed delays.
    json jp = j;
    jp["defense"] = "antitomo";
    auto dir2 = fresh_dir("attack_base");
    cmd_attack(jp, dir2);
    std::ifstream pit(dir2 / "perturbed.txt");
    auto xt = read_delay_vector(pit);
    CHECK(xt.role == DelayRole::Perturbed);
    for (double v : xt.values) CHECK(v == std::floor(v));

    // roto without a checkpoint is a config error.
    json jr = j;
    jr["defense"] = "roto";
    CHECK_THROWS_AS(cmd_attack(jr, dir), ConfigInvalid);
}

TEST_CASE("train worker produces a checkpoint the attack worker can use", "[harness]") {
    auto dir = fresh_dir("train");
    write_ms_fixture(dir / "truth.txt");

    json jt = {{"topology", {{"file", (dir / "truth.txt").string()}}},
               {"train", {{"max_iters", 3}, {"mc_samples", 2}}},
               {"rng_seed", 7}};
    auto report = cmd_train(jt, dir);
    CHECK(report.at("iterations") == 3);

    auto trace = read_text_file(dir / "trace.csv");
    CHECK(trace.rfind("iter,beta_star,objective,reg\n", 0) == 0);
    CHECK(std::count(trace.begin(), trace.end(), '\n') == 4);

    auto params = defense::load_generator(report.at("checkpoint").get<std::string>());
    CHECK(params.layers == 3);

    json ja = {{"topology", {{"file", (dir / "truth.txt").string()}}},
               {"defense", "roto"},
               {"checkpoint", report.at("checkpoint").get<std::string>()},
               {"attacker", "rnj"},
               {"epsilon", 0.0},
               {"rng_seed", 5}};
    auto atk = cmd_attack(ja, dir);
    CHECK(atk.at("metrics").at("link_dist").get<double>() >= 0.0);
    std::ifstream pit(dir / "perturbed.txt");
    CHECK(read_delay_vector(pit).role == DelayRole::Perturbed);
}

TEST_CASE("bound worker reports a fano ceiling the attacker respects", "[harness]") {
    auto dir = fresh_dir("bound");
    json j = {{"topology", {{"leaves", 3}, {"seed", 2}}},
              {"epsilon", 0.0},
              {"defense", "none"},
              {"samples_per_topology", 60},
              {"trials", 200},
              {"rng_seed", 1}};
    auto report = cmd_bound(j, dir);
    CHECK(report.at("space_size") == 4);
    // Noiseless identity channel: MI saturates at log2(4) and MAP always wins.
    CHECK(report.at("mi_bits").get<double>() == Catch::Approx(2.0).margin(1e-9));
    CHECK(report.at("fano_bound") == 1.0);
    CHECK(report.at("success").at("p_hat") == 1.0);
    CHECK(report.at("holds") == true);
    CHECK(fs::exists(dir / "bound.json"));

    json baseline_defense = j;
    baseline_defense["defense"] = "proto";
    CHECK_THROWS_AS(cmd_bound(baseline_defense, dir), ConfigInvalid);
}

TEST_CASE("trained defense degrades attacks more than no defense", "[harness]") {
    auto dir = fresh_dir("roto_run");
    write_ms_fixture(dir / "truth.txt");
    json j = {{"topology", {{"file", (dir / "truth.txt").string()}}},
              {"defenses", {"none", "roto"}},
              {"attackers", {"gibbs"}},
              {"noise_sweep", {0.1}},
              {"trials", 3},
              {"rng_seed", 9},
              {"train", {{"max_iters", 60}, {"mc_samples", 8}}}};
    auto out = run_experiment(parse_experiment_config(j), dir);

    REQUIRE(out.rows.size() == 6);
    double none_mean = 0.0, roto_mean = 0.0;
    for (std::size_t trial = 0; trial < 3; ++trial) {
        none_mean += out.rows[trial].link_dist / 3.0;
        roto_mean += out.rows[3 + trial].link_dist / 3.0;
    }
    CHECK(roto_mean > none_mean);
}
