#include <doctest.h>

#include "c2l/evalharness.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

using namespace c2l;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

std::filesystem::path scratch(const std::string& name) {
    const auto dir = std::filesystem::temp_directory_path() / "c2l_eval_test";
    std::filesystem::create_directories(dir);
    const auto p = dir / name;
    std::filesystem::remove(p);
    std::filesystem::remove(std::filesystem::path(p.string() + ".failures.csv"));
    return p;
}

SweepConfig small_t1() {
    SweepConfig c = SweepConfig::defaults(Experiment::T1);
    c.n_traj = {10};
    c.taus = {3};
    c.dists = {Distribution::Laplace, Distribution::Gaussian};
    c.seeds = 2;
    c.ivfind.w = 4;
    c.ivfind.test.permutations = 50;
    return c;
}

SweepConfig small_t2() {
    SweepConfig c = SweepConfig::defaults(Experiment::T2);
    c.n_traj = {10};
    c.seeds = 1;
    c.ivfind.test.permutations = 50;
    c.learner.max_iter = 500;
    c.episodes = 3;
    c.probes = 200;
    return c;
}

}  // namespace

TEST_CASE("action mse") {
    const ParamPolicy id = ParamPolicy::from_gain(Mat::Identity(1, 1));
    const ParamPolicy twice = ParamPolicy::from_gain(2.0 * Mat::Identity(1, 1));
    Rng rng(1);
    std::normal_distribution<double> N(0.0, 1.0);
    Mat P(20000, 1);
    for (Eigen::Index i = 0; i < P.rows(); ++i) P(i, 0) = N(rng);

    CHECK(action_mse(id, id, P) == 0.0);
    const double m1 = action_mse(twice, id, P.topRows(10000));
    CHECK(std::abs(m1 - 1.0) < 0.05);
    const double m2 = action_mse(twice, id, P);
    // per-probe losses are s^2 with variance 2
    CHECK(std::abs(m2 - m1) < 2.0 * std::sqrt(2.0 / 10000.0));
    CHECK(action_mse(id, P, P) == 0.0);
    CHECK_THROWS_AS(action_mse(id, id, Mat(0, 1)), PreconditionError);
    CHECK_THROWS_AS(action_mse(id, id, Mat::Zero(3, 2)), DimensionError);
}

TEST_CASE("expert probes") {
    const EnvSpec env = default_linear_env(0);
    const ExpertSpec ex = default_expert(env);
    const Mat P = expert_probes(env, ex, {}, 250, 3);
    CHECK(P.rows() == 250);
    CHECK(P.cols() == 4);
    CHECK(P == expert_probes(env, ex, {}, 250, 3));
}

TEST_CASE("policy value") {
    const EnvSpec env = default_linear_env(0);
    const ExpertSpec ex = default_expert(env);
    const ValueAnchors a = value_anchors(env, ex, 10, 5);
    CHECK(a.j_exp > a.j_rand);
    const PolicyValue pv = policy_value(ex.policy, env, 10, 5, a);
    CHECK(pv.j_norm == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pv.j_raw == a.j_exp);
    const PolicyValue again = policy_value(ex.policy, env, ex, 10, 5);
    CHECK(again.j_raw == pv.j_raw);
    CHECK(again.j_norm == pv.j_norm);

    // the random anchor maps to zero
    const ValueAnchors shifted{a.j_exp, pv.j_raw - 1.0};
    CHECK(policy_value(ex.policy, env, 10, 5, shifted).j_norm == doctest::Approx(1.0));
    const ValueAnchors flat{pv.j_raw, pv.j_raw};
    CHECK_THROWS_AS(policy_value(ex.policy, env, 10, 5, flat), DegenerateDataError);
    const ParamPolicy zero = ParamPolicy::linear(FeatureMap::identity(4), 1);
    const PolicyValue z = policy_value(zero, env, 10, 5, a);
    CHECK(z.j_norm < 1.0);
}

TEST_CASE("metric rows") {
    MetricRow r;
    r.experiment = "T2-confounded";
    r.env = "linear";
    r.method = "C2L-offline";
    r.n_traj = 50;
    r.tau = 3;
    r.dist = "laplace";
    r.seed = 18446744073709551615ull;
    r.mse = 0.1;
    r.j_raw = -12.5;
    r.j_norm = 0.75;
    r.selected_lag = 3;
    r.iv_correct = true;
    CHECK(MetricRow::from_csv(r.to_csv()) == r);
    CHECK(std::string(kMetricHeader) ==
          "experiment,env,method,n_traj,tau,dist,seed,mse,j_raw,j_norm,selected_lag,iv_correct,wall_ms");
    MetricRow blank = r;
    blank.mse.reset();
    blank.selected_lag.reset();
    blank.iv_correct.reset();
    CHECK(MetricRow::from_csv(blank.to_csv()) == blank);
    CHECK_THROWS_AS(MetricRow::from_csv("a,b,c"), SchemaError);
}

TEST_CASE("aggregates") {
    std::vector<MetricRow> rows;
    for (int s = 0; s < 3; ++s) {
        MetricRow r;
        r.experiment = "T1";
        r.env = "linear";
        r.method = "ivfind";
        r.n_traj = 10;
        r.tau = 3;
        r.dist = "laplace";
        r.seed = s;
        r.iv_correct = s != 1;
        rows.push_back(r);
    }
    const auto agg = aggregate(rows);
    REQUIRE(agg.size() == 1);
    CHECK(agg[0].metric == "iv_accuracy");
    CHECK(agg[0].mean == doctest::Approx(2.0 / 3.0));
    CHECK(agg[0].std == doctest::Approx(std::sqrt(1.0 / 3.0)));
    CHECK(agg[0].count == 3);
}

TEST_CASE("T1 grid defaults") {
    const SweepConfig c = SweepConfig::defaults(Experiment::T1);
    CHECK(c.n_traj == std::vector<int>{10, 20, 30, 40, 50});
    CHECK(c.taus == std::vector<int>{3, 4, 5, 6, 7});
    CHECK(c.dists.size() == 7);
    CHECK(c.ivfind.w >= 7);
}

TEST_CASE("T1 sweep: rows, resume and worker invariance") {
    const SweepConfig c = small_t1();
    const auto p1 = scratch("t1_w1.csv");
    const SweepResult r1 = run_sweep_T1(c, p1);
    CHECK(r1.rows.size() == 4);
    CHECK(r1.failures.empty());
    for (const auto& row : r1.rows) {
        CHECK(row.iv_correct.has_value());
        if (*row.iv_correct) CHECK(row.selected_lag.value_or(0) == 3);
    }
    const std::string first = slurp(p1);

    const SweepResult again = run_sweep_T1(c, p1);
    CHECK(again.skipped == 4);
    CHECK(again.attempted == 0);
    CHECK(slurp(p1) == first);

    SweepConfig c3 = c;
    c3.workers = 3;
    const auto p3 = scratch("t1_w3.csv");
    run_sweep_T1(c3, p3);
    CHECK(slurp(p3) == first);

    // partial file: drop the last row and resume
    const auto p4 = scratch("t1_partial.csv");
    {
        std::ofstream out(p4, std::ios::binary);
        out << first.substr(0, first.rfind('\n', first.size() - 2) + 1);
    }
    const SweepResult resumed = run_sweep_T1(c, p4);
    CHECK(resumed.skipped == 3);
    CHECK(resumed.attempted == 1);
    CHECK(slurp(p4) == first);

    const auto agg = aggregate(read_metric_rows(p1));
    CHECK(agg.size() == 2);
    const auto charts = sweep_charts(Experiment::T1, agg);
    REQUIRE(charts.count("accuracy_vs_n_by_dist.svg"));
    const std::string svg = svg_line_chart(charts.at("accuracy_vs_n_by_dist.svg"));
    CHECK(svg.find("<svg") == 0);
    CHECK(svg.find("laplace") != std::string::npos);
    CHECK(svg.find("gaussian") != std::string::npos);
}

TEST_CASE("T2 sweep: paired rows and worker invariance") {
    const SweepConfig c = small_t2();
    const auto p1 = scratch("t2_w1.csv");
    const SweepResult r = run_sweep_T2(c, p1);
    CHECK(r.failures.empty());
    REQUIRE(r.rows.size() == 6);
    for (std::size_t i = 0; i < 6; i += 3) {
        CHECK(r.rows[i].method == "BC");
        CHECK(r.rows[i + 1].method == "C2L-sim");
        CHECK(r.rows[i + 2].method == "C2L-offline");
        CHECK(r.rows[i].seed == r.rows[i + 1].seed);
        CHECK(r.rows[i].seed == r.rows[i + 2].seed);
        CHECK(r.rows[i].selected_lag == r.rows[i + 2].selected_lag);
    }
    CHECK(r.rows[0].experiment == "T2-confounded");
    CHECK(r.rows[3].experiment == "T2-unconfounded");
    for (const auto& row : r.rows) {
        CHECK(row.mse.value_or(-1.0) >= 0.0);
        CHECK(row.j_norm.has_value());
        CHECK(!row.wall_ms.has_value());
    }

    SweepConfig c2 = c;
    c2.workers = 2;
    const auto p2 = scratch("t2_w2.csv");
    run_sweep_T2(c2, p2);
    CHECK(slurp(p2) == slurp(p1));

    const auto agg_path = scratch("t2_agg.csv");
    const auto agg = aggregate(read_metric_rows(p1));
    write_aggregates(agg, agg_path);
    std::ifstream in(agg_path);
    std::string header;
    std::getline(in, header);
    CHECK(header == kAggregateHeader);
    const auto charts = sweep_charts(Experiment::T2, agg);
    CHECK(charts.count("mse_vs_n.svg") == 1);
    CHECK(charts.count("j_norm_vs_n.svg") == 1);
    CHECK(charts.at("mse_vs_n.svg").series.size() == 6);
}

TEST_CASE("sweep failures are recorded per row") {
    SweepConfig c = small_t1();
    c.dists = {Distribution::Laplace};
    c.seeds = 1;
    c.env.T = 3;  // shorter than w: every search fails its precondition
    const auto p = scratch("t1_fail.csv");
    const SweepResult r = run_sweep_T1(c, p);
    CHECK(r.rows.empty());
    CHECK(r.failures.size() == 1);
    CHECK(r.success_rate() == 0.0);
    const std::string fails = slurp(std::filesystem::path(p.string() + ".failures.csv"));
    CHECK(fails.find("every trajectory must be longer than w") != std::string::npos);
}

TEST_CASE("sweep config validation") {
    SweepConfig c = small_t1();
    c.seeds = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_t1();
    c.n_traj.clear();
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_t1();
    c.workers = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(parse_experiment("T2") == Experiment::T2);
    CHECK_THROWS_AS(parse_experiment("T3"), ConfigError);
}
