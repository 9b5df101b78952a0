#pragma once

#include "c2l/core.hpp"
#include "c2l/envsim.hpp"
#include "c2l/estimators.hpp"

#include <filesystem>

namespace c2l {

struct LearnerConfig {
    ParamPolicy::Kind pi_kind = ParamPolicy::Kind::Linear;
    Eigen::Index mlp_hidden = 16;
    /// Discriminator features on the instrument.
    FeatureMap::Kind f_features = FeatureMap::Kind::IdentityBias;
    Eigen::Index rff_features = 100;

    double eta = 1e-2;
    /// Negative means "same as eta".
    double eta_f = -1.0;
    int max_iter = 20000;
    double tol = 1e-6;
    int window = 20;
    /// Largest gradient entry allowed at a converged point.
    double grad_tol = 1e-4;
    bool warm_start_bc = true;
    /// Quadratic mirror map from the feature second moments, for linear players.
    bool mirror_map = true;

    int rollouts = 4;  // m
    /// Negative means default_ridge(n).
    double lambda = -1.0;
    GdOptions gd{};
    std::uint64_t seed = 0;

    double f_step() const { return eta_f < 0.0 ? eta : eta_f; }
    Json to_json() const;
};

/// Least squares of a on s over every (s_t, a_t) pair.
ParamPolicy bc_fit(const DemoSet& d, const LearnerConfig& cfg);

/// Fits the configured policy class to (X, A).
ParamPolicy fit_policy(const Mat& X, const Mat& A, const LearnerConfig& cfg);

/// Simulator-based learner: m synthetic rollouts of k steps from each s_{t-k}
/// under the BC policy, each paired with a_t.
ParamPolicy learn_policy_sim(const DemoSet& d, int k, const EnvSpec& env, const LearnerConfig& cfg);

/// mean over rows of 2 (a - pi(s))' f(z) - |f(z)|^2
double minimax_loss(const ParamPolicy& pi, const ParamPolicy& f, const Mat& z, const Mat& s,
                    const Mat& a);

struct MinimaxGrads {
    double loss = 0.0;
    Vec g_pi;
    Vec g_f;
};

MinimaxGrads minimax_grads(const ParamPolicy& pi, const ParamPolicy& f, const Mat& z, const Mat& s,
                           const Mat& a);

struct TraceRow {
    int iteration = 0;
    double loss = 0.0;
    double grad_pi = 0.0;
    double grad_f = 0.0;
    double delta_pi = 0.0;
    double delta_f = 0.0;
};

struct MinimaxState {
    Vec pi;
    Vec f;
    Vec momentum_pi;
    Vec momentum_f;
    int iteration = 0;
    std::vector<TraceRow> trace;

    static MinimaxState start(const Vec& pi0, const Vec& f0);
};

/// pi -= eta (2 g_pi - m_pi); f += eta_f (2 g_f - m_f); momenta <- gradients.
MinimaxState omd_step(MinimaxState state, const Vec& g_pi, const Vec& g_f, double eta, double eta_f);

struct OfflineResult {
    ParamPolicy policy;
    ParamPolicy discriminator;
    MinimaxState state;  // momenta in mirror coordinates
    bool converged = false;
};

OfflineResult learn_policy_offline(const DemoSet& d, int k, const LearnerConfig& cfg);

/// Discriminator for instrument width d_z and action width d_a.
ParamPolicy make_discriminator(const Mat& z, Eigen::Index d_a, const LearnerConfig& cfg);

/// Saddle point of the minimax loss for linear classes (optimally weighted GMM).
ParamPolicy gmm_closed_form(const Mat& z, const Mat& s, const Mat& a, const FeatureMap& instrument,
                            const FeatureMap& state);

/// sup over linear f of the minimax loss, in closed form.
double minimax_inner_max(const ParamPolicy& pi, const FeatureMap& instrument, const Mat& z,
                         const Mat& s, const Mat& a);

void write_trace_csv(const std::vector<TraceRow>& trace, const std::filesystem::path& path);

}  // namespace c2l
