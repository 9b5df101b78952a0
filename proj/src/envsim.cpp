#include "c2l/envsim.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <deque>

namespace c2l {

namespace {

Json mat_json(const Mat& M) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        Json r = Json::array();
        for (Eigen::Index j = 0; j < M.cols(); ++j) r.push_back(M(i, j));
        rows.push_back(std::move(r));
    }
    return rows;
}

Mat mat_from(const Json& j, const char* name) {
    if (!j.is_array() || j.empty() || !j[0].is_array())
        throw SchemaError(std::string(name) + " must be a non-empty matrix");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = static_cast<Eigen::Index>(j[0].size());
    Mat M(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Json& r = j[static_cast<std::size_t>(i)];
        if (!r.is_array() || static_cast<Eigen::Index>(r.size()) != cols)
            throw SchemaError(std::string(name) + " has ragged rows");
        for (Eigen::Index k = 0; k < cols; ++k) M(i, k) = r[static_cast<std::size_t>(k)].get<double>();
    }
    return M;
}

bool is_psd(const Mat& M, double floor) {
    if ((M - M.transpose()).cwiseAbs().maxCoeff() > 1e-12) return false;
    Eigen::SelfAdjointEigenSolver<Mat> eig(M, Eigen::EigenvaluesOnly);
    return eig.eigenvalues().minCoeff() >= floor;
}

std::uint64_t sub_seed(std::uint64_t seed, const char* label) { return derive_seed({seed, label}, 0); }

Vec gaussian_vec(Rng& rng, Eigen::Index n, double scale) {
    std::normal_distribution<double> N(0.0, scale);
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = N(rng);
    return v;
}

}  // namespace

std::string_view to_string(EnvKind k) { return k == EnvKind::Linear ? "linear" : "pendulum"; }

EnvKind parse_env_kind(std::string_view name) {
    if (name == "linear") return EnvKind::Linear;
    if (name == "pendulum") return EnvKind::Pendulum;
    throw ConfigError("unknown env kind '" + std::string(name) + "'");
}

void EnvSpec::validate() const {
    if (kind == EnvKind::Pendulum && (d_s != 2 || d_a != 1))
        throw ConfigError("pendulum env must have d_s = 2 and d_a = 1");
    if (kind == EnvKind::Linear) {
        if (A.rows() != d_s || A.cols() != d_s) throw DimensionError("A must be d_s x d_s");
        if (B.rows() != d_s || B.cols() != d_a) throw DimensionError("B must be d_s x d_a");
    }
    if (Q.rows() != d_s || Q.cols() != d_s) throw DimensionError("Q must be d_s x d_s");
    if (R.rows() != d_a || R.cols() != d_a) throw DimensionError("R must be d_a x d_a");
    if (!is_psd(Q, -1e-12)) throw ConfigError("Q must be symmetric positive semi-definite");
    if (!is_psd(R, 1e-12)) throw ConfigError("R must be symmetric positive definite");
    if (sigma_s < 0.0 || sigma0 < 0.0) throw ConfigError("noise scales must be >= 0");
    if (T < 1) throw ConfigError("horizon T must be >= 1");
    if (burn_in < 0) throw ConfigError("burn_in must be >= 0");
}

Json EnvSpec::to_json() const {
    Json j{{"kind", to_string(kind)}, {"d_s", d_s},   {"d_a", d_a},
           {"sigma_s", sigma_s},      {"noise_dist", to_string(noise_dist)},
           {"Q", mat_json(Q)},        {"R", mat_json(R)},
           {"sigma0", sigma0},        {"burn_in", burn_in},
           {"T", T}};
    if (kind == EnvKind::Linear) {
        j["A"] = mat_json(A);
        j["B"] = mat_json(B);
    } else {
        j["dt"] = dt;
        j["g"] = g;
        j["damping"] = damping;
    }
    return j;
}

EnvSpec EnvSpec::from_json(const Json& j) {
    try {
        EnvSpec e;
        e.kind = parse_env_kind(j.at("kind").get<std::string>());
        e.d_s = j.at("d_s").get<Eigen::Index>();
        e.d_a = j.at("d_a").get<Eigen::Index>();
        e.sigma_s = j.at("sigma_s").get<double>();
        e.noise_dist = parse_distribution(j.at("noise_dist").get<std::string>());
        e.Q = mat_from(j.at("Q"), "Q");
        e.R = mat_from(j.at("R"), "R");
        e.sigma0 = j.at("sigma0").get<double>();
        e.burn_in = j.value("burn_in", e.burn_in);
        e.T = j.at("T").get<int>();
        if (e.kind == EnvKind::Linear) {
            e.A = mat_from(j.at("A"), "A");
            e.B = mat_from(j.at("B"), "B");
        } else {
            e.dt = j.at("dt").get<double>();
            e.g = j.at("g").get<double>();
            e.damping = j.at("damping").get<double>();
        }
        e.validate();
        return e;
    } catch (const Json::exception& ex) {
        throw SchemaError(std::string("env: ") + ex.what());
    }
}

std::vector<double> ConfounderSpec::equal_weights(int tau) {
    if (tau < 0) throw ConfigError("tau must be >= 0");
    return std::vector<double>(static_cast<std::size_t>(tau + 1), 1.0 / (tau + 1));
}

std::vector<double> ConfounderSpec::geometric_weights(int tau, double ratio) {
    if (tau < 0) throw ConfigError("tau must be >= 0");
    std::vector<double> w(static_cast<std::size_t>(tau + 1));
    double c = 1.0;
    for (auto& x : w) {
        x = c;
        c *= ratio;
    }
    return w;
}

void ConfounderSpec::validate() const {
    if (tau < 0) throw ConfigError("tau must be >= 0");
    if (static_cast<int>(weights.size()) != tau + 1)
        throw ConfigError("confounder weights must have tau + 1 entries");
    if (sigma_u < 0.0) throw ConfigError("sigma_u must be >= 0");
}

Json ConfounderSpec::to_json() const {
    return Json{{"tau", tau}, {"distribution", to_string(dist)}, {"sigma_u", sigma_u}, {"weights", weights}};
}

ConfounderSpec ConfounderSpec::from_json(const Json& j) {
    try {
        ConfounderSpec c;
        c.tau = j.at("tau").get<int>();
        c.dist = parse_distribution(j.at("distribution").get<std::string>());
        c.sigma_u = j.at("sigma_u").get<double>();
        c.weights = j.at("weights").get<std::vector<double>>();
        c.validate();
        return c;
    } catch (const Json::exception& ex) {
        throw SchemaError(std::string("confounder: ") + ex.what());
    }
}

Json ExpertSpec::to_json() const {
    return Json{{"policy", policy.to_json()}, {"sigma_a", sigma_a}, {"dist", to_string(dist)}};
}

ExpertSpec ExpertSpec::from_json(const Json& j) {
    try {
        ExpertSpec e;
        e.policy = ParamPolicy::from_json(j.at("policy"));
        e.sigma_a = j.at("sigma_a").get<double>();
        e.dist = parse_distribution(j.at("dist").get<std::string>());
        if (e.sigma_a < 0.0) throw ConfigError("sigma_a must be >= 0");
        return e;
    } catch (const Json::exception& ex) {
        throw SchemaError(std::string("expert: ") + ex.what());
    }
}

Vec env_step(const EnvSpec& spec, const Vec& s, const Vec& a, const Vec& noise) {
    if (s.size() != spec.d_s || noise.size() != spec.d_s || a.size() != spec.d_a)
        throw DimensionError("env_step: state, action or noise has wrong dimension");
    if (spec.kind == EnvKind::Linear) return spec.A * s + spec.B * a + noise;
    Vec out(2);
    out[0] = s[0] + spec.dt * s[1];
    out[1] = s[1] + spec.dt * (-spec.g * std::sin(s[0]) - spec.damping * s[1] + a[0]);
    return out + noise;
}

Vec confound_term(const ConfounderSpec& cs, const std::vector<Vec>& window) {
    if (static_cast<int>(window.size()) != cs.tau + 1)
        throw DimensionError("confounder window must hold tau + 1 draws");
    Vec out = Vec::Zero(window.front().size());
    for (std::size_t j = 0; j < window.size(); ++j) out += cs.weights[j] * window[j];
    return cs.sigma_u * out;
}

double reward(const EnvSpec& spec, const Vec& s, const Vec& a) {
    const double cost = s.dot(spec.Q * s) + a.dot(spec.R * a);
    return std::clamp(-cost, -1.0, 1.0);
}

Trajectory gen_expert_trajectory(const EnvSpec& env, const ExpertSpec& expert,
                                 const ConfounderSpec& cs, std::uint64_t seed) {
    env.validate();
    cs.validate();
    if (expert.policy.d_in != env.d_s || expert.policy.d_out != env.d_a)
        throw DimensionError("expert policy dimensions do not match the env");

    Rng init(sub_seed(seed, "init"));
    StandardizedSampler u_draw(cs.dist, sub_seed(seed, "confounder"));
    StandardizedSampler ea_draw(expert.dist, sub_seed(seed, "action-noise"));
    StandardizedSampler es_draw(env.noise_dist, sub_seed(seed, "state-noise"));

    std::vector<Vec> window;
    for (int j = 0; j <= cs.tau; ++j) window.push_back(u_draw.draw(env.d_a));

    Trajectory tr;
    tr.states.reserve(static_cast<std::size_t>(env.T + 1));
    std::vector<Vec> latents;
    std::vector<double> rewards;
    Vec s = gaussian_vec(init, env.d_s, env.sigma0);
    for (int t = -env.burn_in; t < env.T; ++t) {
        window.pop_back();
        window.insert(window.begin(), u_draw.draw(env.d_a));
        const Vec a = expert.policy.predict(s) + confound_term(cs, window) +
                      expert.sigma_a * ea_draw.draw(env.d_a);
        if (t < 0) {
            s = env_step(env, s, a, env.sigma_s * es_draw.draw(env.d_s));
            continue;
        }
        if (t == 0) tr.states.push_back(s);
        rewards.push_back(reward(env, s, a));
        latents.push_back(window.front());
        s = env_step(env, s, a, env.sigma_s * es_draw.draw(env.d_s));
        tr.actions.push_back(a);
        tr.states.push_back(s);
    }
    tr.latents = std::move(latents);
    tr.rewards = std::move(rewards);
    return tr;
}

DemoSet gen_demoset(const EnvSpec& env, const ExpertSpec& expert, const ConfounderSpec& cs,
                    int N, std::uint64_t seed) {
    if (N < 1) throw PreconditionError("N must be >= 1");
    DemoSet d;
    for (int i = 0; i < N; ++i)
        d.trajectories.push_back(gen_expert_trajectory(env, expert, cs, derive_seed({seed, "traj"}, i)));
    d.meta = Json{{"tau", cs.tau},
                  {"distribution", to_string(cs.dist)},
                  {"seed", seed},
                  {"weights", cs.weights},
                  {"N", N},
                  {"env", env.to_json()},
                  {"expert", expert.to_json()},
                  {"confounder", cs.to_json()}};
    return d;
}

RolloutResult rollout_policy(const EnvSpec& env, const ParamPolicy& policy, int episodes,
                             std::uint64_t seed, const std::optional<ConfounderSpec>& confounded) {
    if (episodes < 1) throw PreconditionError("episodes must be >= 1");
    env.validate();
    if (policy.d_in != env.d_s || policy.d_out != env.d_a)
        throw DimensionError("policy dimensions do not match the env");
    RolloutResult out;
    for (int e = 0; e < episodes; ++e) {
        const std::uint64_t es = derive_seed({seed, "episode"}, e);
        Rng init(sub_seed(es, "init"));
        StandardizedSampler noise(env.noise_dist, sub_seed(es, "state-noise"));
        std::optional<StandardizedSampler> u;
        std::vector<Vec> window;
        if (confounded) {
            confounded->validate();
            u.emplace(confounded->dist, sub_seed(es, "confounder"));
            for (int j = 0; j <= confounded->tau; ++j) window.push_back(u->draw(env.d_a));
        }
        Vec s = gaussian_vec(init, env.d_s, env.sigma0);
        out.initial_states.push_back(s);
        double total = 0.0;
        for (int t = 0; t < env.T; ++t) {
            Vec a = policy.predict(s);
            if (confounded) {
                window.pop_back();
                window.insert(window.begin(), u->draw(env.d_a));
                a += confound_term(*confounded, window);
            }
            total += reward(env, s, a);
            s = env_step(env, s, a, env.sigma_s * noise.draw(env.d_s));
        }
        out.returns.push_back(total);
    }
    double sum = 0.0;
    for (double r : out.returns) sum += r;
    out.mean = sum / episodes;
    return out;
}

RolloutResult rollout_random(const EnvSpec& env, int episodes, std::uint64_t seed, double scale) {
    if (episodes < 1) throw PreconditionError("episodes must be >= 1");
    env.validate();
    RolloutResult out;
    for (int e = 0; e < episodes; ++e) {
        const std::uint64_t es = derive_seed({seed, "episode"}, e);
        Rng init(sub_seed(es, "init"));
        Rng act(sub_seed(es, "random-action"));
        StandardizedSampler noise(env.noise_dist, sub_seed(es, "state-noise"));
        Vec s = gaussian_vec(init, env.d_s, env.sigma0);
        out.initial_states.push_back(s);
        double total = 0.0;
        for (int t = 0; t < env.T; ++t) {
            const Vec a = gaussian_vec(act, env.d_a, scale);
            total += reward(env, s, a);
            s = env_step(env, s, a, env.sigma_s * noise.draw(env.d_s));
        }
        out.returns.push_back(total);
    }
    double sum = 0.0;
    for (double r : out.returns) sum += r;
    out.mean = sum / episodes;
    return out;
}

Vec synth_rollout(const EnvSpec& env, const ParamPolicy& pi1, const Vec& s_start, int steps,
                  std::uint64_t seed) {
    if (steps < 1) throw PreconditionError("steps must be >= 1");
    StandardizedSampler noise(env.noise_dist, sub_seed(seed, "synth-noise"));
    Vec s = s_start;
    for (int i = 0; i < steps; ++i) s = env_step(env, s, pi1.predict(s), env.sigma_s * noise.draw(env.d_s));
    return s;
}

Mat lqr_gain(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, double tol, int max_iter) {
    Mat P = Q;
    for (int it = 0; it < max_iter; ++it) {
        const Mat BtPA = B.transpose() * P * A;
        const Mat S = R + B.transpose() * P * B;
        Mat next = Q + A.transpose() * P * A - BtPA.transpose() * S.ldlt().solve(BtPA);
        next = 0.5 * (next + next.transpose());
        const double delta = (next - P).cwiseAbs().maxCoeff();
        P = std::move(next);
        if (delta < tol) {
            return (R + B.transpose() * P * B).ldlt().solve(B.transpose() * P * A);
        }
    }
    throw PreconditionError("Riccati iteration did not converge");
}

double spectral_radius(const Mat& M) {
    Eigen::EigenSolver<Mat> eig(M, false);
    return eig.eigenvalues().cwiseAbs().maxCoeff();
}

EnvSpec default_linear_env(std::uint64_t seed) {
    EnvSpec e;
    e.kind = EnvKind::Linear;
    e.d_s = 4;
    e.d_a = 1;
    Rng rng(derive_seed({seed, "default-linear-env"}, 0));
    std::normal_distribution<double> N(0.0, 1.0);
    Mat G(4, 4);
    for (Eigen::Index i = 0; i < G.size(); ++i) G.data()[i] = N(rng);
    Eigen::HouseholderQR<Mat> qr(G);
    Mat O = qr.householderQ();
    // fix column signs so the draw is unique
    const Mat Rm = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < 4; ++j)
        if (Rm(j, j) < 0) O.col(j) *= -1.0;
    e.A = 0.9 * O;
    e.B.resize(4, 1);
    for (Eigen::Index i = 0; i < 4; ++i) e.B(i, 0) = N(rng);
    e.Q = Mat::Identity(4, 4) * 0.05;
    e.R = Mat::Identity(1, 1) * 0.5;
    e.sigma_s = 0.1;
    e.sigma0 = 1.0;
    e.T = 100;
    return e;
}

EnvSpec default_pendulum_env() {
    EnvSpec e;
    e.kind = EnvKind::Pendulum;
    e.d_s = 2;
    e.d_a = 1;
    e.dt = 0.05;
    e.g = 9.81;
    e.damping = 0.1;
    e.Q = Mat::Identity(2, 2) * 0.05;
    e.R = Mat::Identity(1, 1) * 0.01;
    e.sigma_s = 0.01;
    e.sigma0 = 0.3;
    e.T = 100;
    return e;
}

ExpertSpec default_expert(const EnvSpec& env) {
    ExpertSpec x;
    if (env.kind == EnvKind::Linear) {
        x.policy = ParamPolicy::from_gain(-lqr_gain(env.A, env.B, env.Q, env.R));
    } else {
        Mat K(1, 2);
        K << -5.0, -2.0;
        x.policy = ParamPolicy::from_gain(K);
    }
    x.sigma_a = 0.1;
    x.dist = env.noise_dist;
    return x;
}

}  // namespace c2l
