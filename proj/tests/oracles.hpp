#pragma once

#include "c2l/envsim.hpp"

namespace c2l::oracle {

// Exact pooled second moments of the confounded linear system, propagated
// through the augmented state x_t = (s_t, u_{t-1}, ..., u_{t-tau}).
struct PooledMoments {
    Mat ss;    // mean_t E[s_t s_t']
    Mat s_cf;  // mean_t E[s_t h_t'], h_t the confound term at t
};

inline PooledMoments pooled_moments(const EnvSpec& env, const ExpertSpec& ex, const ConfounderSpec& cs) {
    const Eigen::Index ds = env.d_s, da = env.d_a;
    const int tau = cs.tau;
    const Eigen::Index dx = ds + tau * da;
    const Mat K = ex.policy.gain();
    Mat F = Mat::Zero(dx, dx);
    F.topLeftCorner(ds, ds) = env.A + env.B * K;
    for (int j = 1; j <= tau; ++j) F.block(0, ds + (j - 1) * da, ds, da) = env.B * (cs.sigma_u * cs.weights[j]);
    for (int j = 2; j <= tau; ++j)
        F.block(ds + (j - 1) * da, ds + (j - 2) * da, da, da) = Mat::Identity(da, da);
    const Eigen::Index dw = 2 * da + ds;
    Mat G = Mat::Zero(dx, dw);
    G.block(0, 0, ds, da) = env.B * (cs.sigma_u * cs.weights[0]);
    G.block(0, da, ds, da) = env.B * ex.sigma_a;
    G.block(0, 2 * da, ds, ds) = Mat::Identity(ds, ds) * env.sigma_s;
    if (tau > 0) G.block(ds, 0, da, da) = Mat::Identity(da, da);
    const Mat GG = G * G.transpose();

    Mat S = Mat::Identity(dx, dx);
    S.topLeftCorner(ds, ds) *= env.sigma0 * env.sigma0;
    Mat sum = Mat::Zero(dx, dx);
    for (int t = -env.burn_in; t < env.T; ++t) {
        if (t >= 0) sum += S;
        S = F * S * F.transpose() + GG;
    }
    sum /= static_cast<double>(env.T);

    PooledMoments m;
    m.ss = sum.topLeftCorner(ds, ds);
    m.s_cf = Mat::Zero(ds, da);
    for (int j = 1; j <= tau; ++j) m.s_cf += sum.block(0, ds + (j - 1) * da, ds, da) * (cs.sigma_u * cs.weights[j]);
    return m;
}

// Population bias of pooled least squares: Cov(s,s)^-1 Cov(s, h), shape d_s x d_a.
inline Mat bc_bias(const EnvSpec& env, const ExpertSpec& ex, const ConfounderSpec& cs) {
    const PooledMoments m = pooled_moments(env, ex, cs);
    return m.ss.ldlt().solve(m.s_cf);
}

}  // namespace c2l::oracle
