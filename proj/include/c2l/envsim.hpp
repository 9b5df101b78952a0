#pragma once

#include "c2l/core.hpp"
#include "c2l/estimators.hpp"

#include <optional>

namespace c2l {

enum class EnvKind { Linear, Pendulum };

std::string_view to_string(EnvKind k);
EnvKind parse_env_kind(std::string_view name);

struct EnvSpec {
    EnvKind kind = EnvKind::Linear;
    Eigen::Index d_s = 4;
    Eigen::Index d_a = 1;
    // linear
    Mat A;
    Mat B;
    // pendulum
    double dt = 0.05;
    double g = 9.81;  // gravity / length
    double damping = 0.1;

    double sigma_s = 0.1;
    Distribution noise_dist = Distribution::Laplace;
    Mat Q;
    Mat R;
    double sigma0 = 1.0;
    /// Unlogged expert steps simulated before t = 0.
    int burn_in = 100;
    int T = 100;

    /// Shapes, Q PSD, R PD; pendulum fixes d_s = 2, d_a = 1.
    void validate() const;

    Json to_json() const;
    static EnvSpec from_json(const Json& j);
};

struct ConfounderSpec {
    int tau = 3;
    Distribution dist = Distribution::Laplace;
    double sigma_u = 1.0;
    std::vector<double> weights = equal_weights(3);

    static std::vector<double> equal_weights(int tau);
    static std::vector<double> geometric_weights(int tau, double ratio = 0.5);

    void validate() const;
    Json to_json() const;
    static ConfounderSpec from_json(const Json& j);
};

struct ExpertSpec {
    ParamPolicy policy;
    double sigma_a = 0.1;
    Distribution dist = Distribution::Laplace;

    Json to_json() const;
    static ExpertSpec from_json(const Json& j);
};

/// Linear: A s + B a + noise. Pendulum: semi-implicit-free Euler step plus noise.
Vec env_step(const EnvSpec& spec, const Vec& s, const Vec& a, const Vec& noise);

/// sigma_u * sum_j c_j window[j], window newest first.
Vec confound_term(const ConfounderSpec& cs, const std::vector<Vec>& window);

/// clamp(-(s'Qs + a'Ra), -1, 1)
double reward(const EnvSpec& spec, const Vec& s, const Vec& a);

Trajectory gen_expert_trajectory(const EnvSpec& env, const ExpertSpec& expert,
                                 const ConfounderSpec& cs, std::uint64_t seed);

/// Trajectory i uses derive_seed({seed, "traj"}, i).
DemoSet gen_demoset(const EnvSpec& env, const ExpertSpec& expert, const ConfounderSpec& cs,
                    int N, std::uint64_t seed);

struct RolloutResult {
    double mean = 0.0;
    std::vector<double> returns;
    std::vector<Vec> initial_states;
};

/// Mean clamped return of `policy` over `episodes` episodes of length env.T.
RolloutResult rollout_policy(const EnvSpec& env, const ParamPolicy& policy, int episodes,
                             std::uint64_t seed,
                             const std::optional<ConfounderSpec>& confounded = std::nullopt);

/// Mean return of the zero-mean random policy a ~ N(0, scale^2 I).
RolloutResult rollout_random(const EnvSpec& env, int episodes, std::uint64_t seed,
                             double scale = 1.0);

/// `steps` closed-loop steps under pi1 with fresh state noise and no confounding.
Vec synth_rollout(const EnvSpec& env, const ParamPolicy& pi1, const Vec& s_start, int steps,
                  std::uint64_t seed);

/// Infinite-horizon discrete LQR gain K_lqr (u = -K_lqr s) by Riccati iteration.
Mat lqr_gain(const Mat& A, const Mat& B, const Mat& Q, const Mat& R, double tol = 1e-10,
             int max_iter = 100000);

double spectral_radius(const Mat& M);

/// Default 4-state, 1-action linear environment (seeded draw of A and B).
EnvSpec default_linear_env(std::uint64_t seed = 0);
EnvSpec default_pendulum_env();

/// LQR expert for a linear env, PD expert for the pendulum.
ExpertSpec default_expert(const EnvSpec& env);

}  // namespace c2l
