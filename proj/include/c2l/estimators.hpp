#pragma once

#include "c2l/core.hpp"

#include <functional>

namespace c2l {

struct FeatureMap {
    enum class Kind { IdentityBias, RandomFourier };

    Kind kind = Kind::IdentityBias;
    Eigen::Index input_dim = 0;
    Eigen::Index output_dim = 0;
    // random-fourier only
    Mat omega;  // output_dim x input_dim
    Vec phase;  // output_dim
    double bandwidth = 0.0;
    std::uint64_t seed = 0;

    static FeatureMap identity(Eigen::Index input_dim);
    /// omega ~ N(0, 1/bw^2), phase ~ U(0, 2 pi), drawn once from `seed`.
    static FeatureMap random_fourier(Eigen::Index input_dim, Eigen::Index m, double bandwidth,
                                     std::uint64_t seed);

    Vec featurize(const Vec& x) const;
    /// Row-wise featurization of an n x input_dim matrix.
    Mat featurize_rows(const Mat& X) const;

    Json to_json() const;
    static FeatureMap from_json(const Json& j);
};

std::string_view to_string(FeatureMap::Kind k);

struct ParamPolicy {
    enum class Kind { Linear, Mlp };

    Kind kind = Kind::Linear;
    Eigen::Index d_in = 0;
    Eigen::Index d_out = 0;
    std::uint64_t seed = 0;

    // linear: out = W' phi(x)
    FeatureMap features;
    Mat W;  // features.output_dim x d_out

    // mlp: out = W2 tanh(W1 x + b1) + b2
    Mat W1;  // hidden x d_in
    Vec b1;
    Mat W2;  // d_out x hidden
    Vec b2;

    static ParamPolicy linear(const FeatureMap& fm, Eigen::Index d_out);
    /// Linear gain policy out = K x with no bias (K is d_out x d_in).
    static ParamPolicy from_gain(const Mat& K);
    static ParamPolicy mlp(Eigen::Index d_in, Eigen::Index hidden, Eigen::Index d_out,
                           std::uint64_t seed, double init_scale = 0.1);

    Eigen::Index hidden() const { return W1.rows(); }

    Vec predict(const Vec& x) const;
    Mat predict_rows(const Mat& X) const;

    Eigen::Index param_count() const;
    Vec params() const;
    void set_params(const Vec& theta);

    /// Gradient in parameter space of sum_i G.row(i) . predict(X.row(i)).
    Vec param_vjp(const Mat& X, const Mat& G) const;

    /// Gain matrix (d_out x d_in) of a linear policy on identity features.
    Mat gain() const;

    Json to_json() const;
    static ParamPolicy from_json(const Json& j);
};

std::string_view to_string(ParamPolicy::Kind k);

struct FitReport {
    double rss = 0.0;
    double param_norm = 0.0;
    double condition = 0.0;
    Eigen::Index n = 0;
};

/// argmin |XW - Y|^2 + lambda |W|^2 via the normal equations.
/// Throws SingularMatrixError when lambda == 0 and X is rank deficient.
Mat fit_ridge(const Mat& X, const Mat& Y, double lambda, FitReport* report = nullptr);

/// Default ridge for an n-row problem.
inline double default_ridge(Eigen::Index n) { return 1e-6 * static_cast<double>(n); }

struct TwoStageFit {
    ParamPolicy l;        // l(s) = stage2' phi_s(s)
    Mat stage1;           // m_z x m_s
    Mat stage2;           // m_s x d_a
    double min_singular = 0.0;  // of the stage-1 coefficients on the non-constant block
    double f_ratio = 0.0;       // smallest per-regressor stage-1 F statistic
    double l_norm = 0.0;
    FitReport report;
};

/// Feature-based two-stage least squares of a on s with instrument z.
/// Throws PreconditionError on an order-condition violation or too few rows.
TwoStageFit fit_2sls(const Mat& z, const Mat& s, const Mat& a, const FeatureMap& instrument,
                     const FeatureMap& state, double lambda);

/// Central differences.
Vec numeric_grad(const std::function<double(const Vec&)>& f, const Vec& theta, double h);

/// mean |a - pi(x)|^2
double squared_loss(const ParamPolicy& p, const Mat& X, const Mat& A);
Vec squared_loss_grad(const ParamPolicy& p, const Mat& X, const Mat& A);

struct GdOptions {
    double step = 0.05;
    int max_iter = 5000;
    double tol = 1e-9;
};

/// Full-batch gradient descent on squared_loss. Returns iterations used.
int fit_gd(ParamPolicy& p, const Mat& X, const Mat& A, const GdOptions& opts);

}  // namespace c2l
