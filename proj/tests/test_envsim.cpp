#include <doctest.h>

#include "c2l/envsim.hpp"

#include <algorithm>
#include <cmath>

using namespace c2l;

namespace {

EnvSpec tiny_linear(double a_diag = 0.9) {
    EnvSpec e;
    e.d_s = 2;
    e.d_a = 1;
    e.A = Mat::Identity(2, 2) * a_diag;
    e.B = Mat::Zero(2, 1);
    e.B(0, 0) = 1.0;
    e.Q = Mat::Identity(2, 2) * 0.05;
    e.R = Mat::Identity(1, 1) * 0.05;
    e.T = 20;
    return e;
}

double corr(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) mx += x[i], my += y[i];
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

ExpertSpec quiet(ExpertSpec e) {
    e.sigma_a = 0.0;
    return e;
}

}  // namespace

TEST_CASE("env_step") {
    EnvSpec e = tiny_linear();
    Vec s(2), a(1);
    s << 1, 1;
    a << 2;
    const Vec next = env_step(e, s, a, Vec::Zero(2));
    CHECK(next[0] == doctest::Approx(2.9));
    CHECK(next[1] == doctest::Approx(0.9));

    e.A = Mat::Identity(2, 2);
    e.B = Mat::Identity(2, 2);
    e.d_a = 2;
    e.R = Mat::Identity(2, 2);
    CHECK(env_step(e, Vec::Zero(2), Vec::Zero(2), Vec::Zero(2)).norm() == 0.0);
    CHECK_THROWS_AS(env_step(e, Vec::Zero(3), Vec::Zero(2), Vec::Zero(2)), DimensionError);

    const EnvSpec p = default_pendulum_env();
    CHECK(env_step(p, Vec::Zero(2), Vec::Zero(1), Vec::Zero(2)).norm() == 0.0);
    Vec th(2);
    th << 0.5, -1.0;
    const Vec pn = env_step(p, th, Vec::Constant(1, 0.3), Vec::Zero(2));
    CHECK(pn[0] == doctest::Approx(0.5 + p.dt * -1.0));
    CHECK(pn[1] == doctest::Approx(-1.0 + p.dt * (-p.g * std::sin(0.5) + p.damping * 1.0 + 0.3)));
}

TEST_CASE("confound_term") {
    ConfounderSpec cs;
    cs.tau = 2;
    cs.sigma_u = 1.0;
    cs.weights = {1, 1, 1};
    const std::vector<Vec> w{Vec::Constant(1, 1), Vec::Constant(1, 2), Vec::Constant(1, 3)};
    CHECK(confound_term(cs, w)[0] == 6.0);
    cs.weights = {0, 0, 0};
    CHECK(confound_term(cs, w)[0] == 0.0);
    CHECK_THROWS_AS(confound_term(cs, {Vec::Ones(1)}), DimensionError);

    ConfounderSpec g;
    g.tau = 3;
    g.sigma_u = 2.0;
    g.weights = ConfounderSpec::geometric_weights(3, 0.5);
    REQUIRE(g.weights.size() == 4);
    CHECK(g.weights[3] == 0.125);
    const std::vector<Vec> w4{Vec::Constant(1, 1), Vec::Constant(1, -2), Vec::Constant(1, 4), Vec::Constant(1, 8)};
    CHECK(confound_term(g, w4)[0] == doctest::Approx(2.0 * (1 - 1 + 1 + 1)));

    const auto eq = ConfounderSpec::equal_weights(4);
    CHECK(eq.size() == 5);
    CHECK(eq[2] == doctest::Approx(0.2));
}

TEST_CASE("spec validation") {
    ConfounderSpec cs;
    cs.tau = -1;
    CHECK_THROWS(cs.validate());
    cs = ConfounderSpec{};
    cs.weights = {1.0};
    CHECK_THROWS(cs.validate());
    cs = ConfounderSpec{};
    cs.sigma_u = -1;
    CHECK_THROWS(cs.validate());

    EnvSpec e = tiny_linear();
    e.R = Mat::Zero(1, 1);
    CHECK_THROWS(e.validate());
    e = tiny_linear();
    e.Q(0, 0) = -1;
    CHECK_THROWS(e.validate());
    CHECK_NOTHROW(default_linear_env(0).validate());

    const EnvSpec d = default_linear_env(0);
    CHECK(EnvSpec::from_json(d.to_json()).A == d.A);
    const ConfounderSpec c0{};
    CHECK(ConfounderSpec::from_json(c0.to_json()).weights == c0.weights);
}

TEST_CASE("default linear env and expert") {
    const EnvSpec env = default_linear_env(0);
    CHECK(std::abs(spectral_radius(env.A) - 0.9) < 1e-9);
    const ExpertSpec ex = default_expert(env);
    const Mat K = ex.policy.gain();
    CHECK(spectral_radius(env.A + env.B * K) < 1.0);
    // Riccati fixed point
    const Mat Kl = -K;
    Mat P = env.Q;
    for (int i = 0; i < 20000; ++i) {
        const Mat Acl = env.A - env.B * Kl;
        P = env.Q + Kl.transpose() * env.R * Kl + Acl.transpose() * P * Acl;
    }
    const Mat Kstar = (env.R + env.B.transpose() * P * env.B).ldlt().solve(env.B.transpose() * P * env.A);
    CHECK((Kstar - Kl).cwiseAbs().maxCoeff() < 1e-6);
    CHECK(default_linear_env(0).A == env.A);
}

TEST_CASE("expert trajectories") {
    const EnvSpec env = default_linear_env(0);
    const ExpertSpec ex = default_expert(env);
    ConfounderSpec cs;

    SUBCASE("noiseless degenerate case") {
        EnvSpec e = env;
        e.sigma_s = 0;
        ConfounderSpec c = cs;
        c.sigma_u = 0;
        const Trajectory tr = gen_expert_trajectory(e, quiet(ex), c, 3);
        for (std::size_t t = 0; t < tr.horizon(); ++t)
            CHECK((tr.actions[t] - ex.policy.predict(tr.states[t])).norm() == 0.0);
    }
    SUBCASE("determinism and shapes") {
        const Trajectory a = gen_expert_trajectory(env, ex, cs, 5);
        const Trajectory b = gen_expert_trajectory(env, ex, cs, 5);
        CHECK(a == b);
        CHECK(a.horizon() == static_cast<std::size_t>(env.T));
        CHECK(a.states.size() == static_cast<std::size_t>(env.T + 1));
        CHECK(!(a == gen_expert_trajectory(env, ex, cs, 6)));
        for (double r : *a.rewards) {
            CHECK(r <= 1.0);
            CHECK(r >= -1.0);
        }
    }
    SUBCASE("confounder window for tau in 3..7") {
        for (int tau = 3; tau <= 7; ++tau) {
            ConfounderSpec c;
            c.tau = tau;
            c.weights = ConfounderSpec::equal_weights(tau);
            const DemoSet d = gen_demoset(env, ex, c, 2, 11);
            CHECK(d.trajectories.size() == 2);
            CHECK(d.trajectories[0].horizon() == static_cast<std::size_t>(env.T));
            CHECK(d == gen_demoset(env, ex, c, 2, 11));
        }
    }
}

TEST_CASE("latent regression recovers the confounder weights") {
    const EnvSpec env = default_linear_env(0);
    const ExpertSpec ex = default_expert(env);
    ConfounderSpec cs;
    cs.weights = {0.4, 0.3, 0.2, 0.1};
    const DemoSet d = gen_demoset(env, ex, cs, 1000, 17);
    std::vector<Vec> X;
    std::vector<Vec> y;
    for (const auto& tr : d.trajectories) {
        const auto& u = *tr.latents;
        for (std::size_t t = 3; t < tr.horizon(); ++t) {
            Vec row(4);
            for (int j = 0; j < 4; ++j) row[j] = u[t - j][0];
            X.push_back(row);
            y.push_back(tr.actions[t] - ex.policy.predict(tr.states[t]));
        }
    }
    const Mat Xm = stack_rows(X), Ym = stack_rows(y);
    const Vec coef = (Xm.transpose() * Xm).ldlt().solve(Xm.transpose() * Ym);
    for (int j = 0; j < 4; ++j) {
        CAPTURE(j);
        CHECK(std::abs(coef[j] - cs.sigma_u * cs.weights[j]) < 0.02 * cs.sigma_u * cs.weights[j]);
    }
}

TEST_CASE("confounder bookkeeping") {
    const EnvSpec env = default_linear_env(0);
    const ExpertSpec ex = default_expert(env);
    ConfounderSpec cs;
    const DemoSet d = gen_demoset(env, ex, cs, 1000, 23);
    std::vector<double> u_lag, a_now, s_lag;
    for (const auto& tr : d.trajectories) {
        const auto& u = *tr.latents;
        for (std::size_t t = 3; t < tr.horizon(); ++t) {
            u_lag.push_back(u[t - 3][0]);
            a_now.push_back(tr.actions[t][0]);
            s_lag.push_back(tr.states[t - 3][0]);
        }
    }
    const double n = static_cast<double>(u_lag.size());
    CHECK(std::abs(corr(u_lag, a_now)) > 0.05);
    CHECK(std::abs(corr(u_lag, s_lag)) < 3.0 / std::sqrt(n));
}

TEST_CASE("closed-loop trajectories stay bounded") {
    const EnvSpec env = default_linear_env(0);
    const ExpertSpec ex = default_expert(env);
    const ConfounderSpec cs;
    double worst = 0.0;
    for (int seed = 0; seed < 100; ++seed) {
        const Trajectory tr = gen_expert_trajectory(env, ex, cs, seed);
        for (const auto& s : tr.states) worst = std::max(worst, s.norm());
    }
    CHECK(worst < 100.0 * std::max(env.sigma0, cs.sigma_u));
}

TEST_CASE("demo sets") {
    const EnvSpec env = default_linear_env(0);
    const ExpertSpec ex = default_expert(env);
    const DemoSet d = gen_demoset(env, ex, {}, 10, 1);
    CHECK(d.trajectories.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(d.trajectories[i].horizon() == static_cast<std::size_t>(env.T));
        for (std::size_t j = i + 1; j < 10; ++j) CHECK(!(d.trajectories[i] == d.trajectories[j]));
    }
    CHECK(d.meta["tau"] == 3);
    CHECK(d.meta["N"] == 10);
    CHECK_THROWS_AS(gen_demoset(env, ex, {}, 0, 1), PreconditionError);
}

TEST_CASE("policy rollouts") {
    EnvSpec env = default_linear_env(0);
    const ExpertSpec ex = default_expert(env);

    SUBCASE("zero policy from the origin") {
        EnvSpec e = env;
        e.sigma_s = 0;
        e.sigma0 = 0;
        const ParamPolicy zero = ParamPolicy::linear(FeatureMap::identity(4), 1);
        CHECK(rollout_policy(e, zero, 3, 1).mean == 0.0);
    }
    SUBCASE("noiseless expert matches direct simulation") {
        EnvSpec e = env;
        e.sigma_s = 0;
        const auto res = rollout_policy(e, ex.policy, 3, 9);
        REQUIRE(res.initial_states.size() == 3);
        const Mat K = ex.policy.gain();
        for (int ep = 0; ep < 3; ++ep) {
            Vec s = res.initial_states[ep];
            double J = 0.0;
            for (int t = 0; t < e.T; ++t) {
                const Vec a = K * s;
                J += std::clamp(-(s.dot(e.Q * s) + a.dot(e.R * a)), -1.0, 1.0);
                s = e.A * s + e.B * a;
            }
            CHECK(res.returns[ep] == doctest::Approx(J).epsilon(1e-12));
        }
    }
    SUBCASE("determinism") {
        const auto a = rollout_policy(env, ex.policy, 4, 77);
        const auto b = rollout_policy(env, ex.policy, 4, 77);
        CHECK(a.returns == b.returns);
        CHECK(a.mean == b.mean);
        CHECK(rollout_random(env, 4, 3).returns == rollout_random(env, 4, 3).returns);
    }
    SUBCASE("expert beats random") {
        CHECK(rollout_policy(env, ex.policy, 20, 5).mean > rollout_random(env, 20, 5).mean);
    }
}

TEST_CASE("synthetic rollouts") {
    EnvSpec env = default_linear_env(0);
    const ExpertSpec ex = default_expert(env);
    const Mat Acl = env.A + env.B * ex.policy.gain();
    Vec s0(4);
    s0 << 1.0, -0.5, 0.25, 2.0;

    SUBCASE("noiseless matrix power") {
        EnvSpec e = env;
        e.sigma_s = 0;
        for (int k = 1; k <= 5; ++k) {
            Mat P = Mat::Identity(4, 4);
            for (int i = 0; i < k; ++i) P = Acl * P;
            CHECK((synth_rollout(e, ex.policy, s0, k, 3) - P * s0).norm() < 1e-12);
        }
    }
    SUBCASE("single step") {
        EnvSpec e = env;
        e.sigma_s = 0;
        CHECK((synth_rollout(e, ex.policy, s0, 1, 3) - env_step(e, s0, ex.policy.predict(s0), Vec::Zero(4))).norm() == 0.0);
        CHECK_THROWS_AS(synth_rollout(e, ex.policy, s0, 0, 3), PreconditionError);
    }
    SUBCASE("independent of logged confounders given the start") {
        const ConfounderSpec cs;
        const DemoSet d = gen_demoset(env, ex, cs, 110, 31);
        std::vector<double> res, u1, u3;
        std::uint64_t idx = 0;
        for (const auto& tr : d.trajectories) {
            const auto& u = *tr.latents;
            for (std::size_t t = 3; t < tr.horizon() && res.size() < 10000; ++t) {
                const Vec start = tr.states[t - 3];
                const Vec sim = synth_rollout(env, ex.policy, start, 3, derive_seed({31, "synth-test"}, idx++));
                Mat P = Acl * Acl * Acl;
                res.push_back((sim - P * start)[0]);
                u1.push_back(u[t - 1][0]);
                u3.push_back(u[t - 3][0]);
            }
        }
        REQUIRE(res.size() == 10000);
        CHECK(std::abs(corr(res, u1)) < 3.0 / 100.0);
        CHECK(std::abs(corr(res, u3)) < 3.0 / 100.0);
    }
}
