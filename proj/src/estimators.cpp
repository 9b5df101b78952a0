#include "c2l/estimators.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>
#include <numbers>

namespace c2l {

namespace {

Json mat_to_json(const Mat& M) {
    Json rows = Json::array();
    for (Eigen::Index i = 0; i < M.rows(); ++i) {
        Json r = Json::array();
        for (Eigen::Index j = 0; j < M.cols(); ++j) r.push_back(M(i, j));
        rows.push_back(std::move(r));
    }
    return rows;
}

Mat mat_from_json(const Json& j, Eigen::Index rows, Eigen::Index cols) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != rows)
        throw SchemaError("matrix has wrong row count");
    Mat M(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        const Json& r = j[static_cast<std::size_t>(i)];
        if (!r.is_array() || static_cast<Eigen::Index>(r.size()) != cols)
            throw SchemaError("matrix has wrong column count");
        for (Eigen::Index k = 0; k < cols; ++k) M(i, k) = r[static_cast<std::size_t>(k)].get<double>();
    }
    return M;
}

Json vec_to_json(const Vec& v) {
    Json a = Json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

Vec vec_from_json(const Json& j, Eigen::Index n) {
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != n)
        throw SchemaError("vector has wrong length");
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
    return v;
}

void append(Vec& out, Eigen::Index& at, const double* p, Eigen::Index n) {
    out.segment(at, n) = Eigen::Map<const Vec>(p, n);
    at += n;
}

void take(const Vec& in, Eigen::Index& at, double* p, Eigen::Index n) {
    Eigen::Map<Vec>(p, n) = in.segment(at, n);
    at += n;
}

}  // namespace

// ---------------------------------------------------------------------------
// FeatureMap

FeatureMap FeatureMap::identity(Eigen::Index input_dim) {
    FeatureMap fm;
    fm.kind = Kind::IdentityBias;
    fm.input_dim = input_dim;
    fm.output_dim = input_dim + 1;
    return fm;
}

FeatureMap FeatureMap::random_fourier(Eigen::Index input_dim, Eigen::Index m, double bandwidth,
                                      std::uint64_t seed) {
    if (!(bandwidth > 0.0)) throw PreconditionError("random-fourier bandwidth must be positive");
    if (m < 1) throw PreconditionError("random-fourier needs m >= 1");
    FeatureMap fm;
    fm.kind = Kind::RandomFourier;
    fm.input_dim = input_dim;
    fm.output_dim = m;
    fm.bandwidth = bandwidth;
    fm.seed = seed;
    Rng rng(derive_seed({seed, "rff"}, 0));
    std::normal_distribution<double> N(0.0, 1.0 / bandwidth);
    std::uniform_real_distribution<double> U(0.0, 2.0 * std::numbers::pi);
    fm.omega.resize(m, input_dim);
    fm.phase.resize(m);
    for (Eigen::Index i = 0; i < m; ++i) {
        for (Eigen::Index j = 0; j < input_dim; ++j) fm.omega(i, j) = N(rng);
        fm.phase[i] = U(rng);
    }
    return fm;
}

Vec FeatureMap::featurize(const Vec& x) const {
    if (x.size() != input_dim) throw DimensionError("feature input has wrong dimension");
    if (kind == Kind::IdentityBias) {
        Vec out(output_dim);
        out.head(input_dim) = x;
        out[input_dim] = 1.0;
        return out;
    }
    const double c = std::sqrt(2.0 / static_cast<double>(output_dim));
    return c * (omega * x + phase).array().cos().matrix();
}

Mat FeatureMap::featurize_rows(const Mat& X) const {
    if (X.cols() != input_dim) throw DimensionError("feature input has wrong dimension");
    if (kind == Kind::IdentityBias) {
        Mat out(X.rows(), output_dim);
        out.leftCols(input_dim) = X;
        out.col(input_dim).setOnes();
        return out;
    }
    const double c = std::sqrt(2.0 / static_cast<double>(output_dim));
    Mat arg = X * omega.transpose();
    arg.rowwise() += phase.transpose();
    return c * arg.array().cos().matrix();
}

std::string_view to_string(FeatureMap::Kind k) {
    return k == FeatureMap::Kind::IdentityBias ? "identity_bias" : "random_fourier";
}

Json FeatureMap::to_json() const {
    Json j{{"kind", to_string(kind)}, {"input_dim", input_dim}, {"output_dim", output_dim}};
    if (kind == Kind::RandomFourier) {
        j["bandwidth"] = bandwidth;
        j["seed"] = seed;
        j["omega"] = mat_to_json(omega);
        j["phase"] = vec_to_json(phase);
    }
    return j;
}

FeatureMap FeatureMap::from_json(const Json& j) {
    try {
        const std::string kind = j.at("kind").get<std::string>();
        const Eigen::Index in = j.at("input_dim").get<Eigen::Index>();
        if (kind == "identity_bias") return identity(in);
        if (kind != "random_fourier") throw SchemaError("unknown feature map kind '" + kind + "'");
        FeatureMap fm;
        fm.kind = Kind::RandomFourier;
        fm.input_dim = in;
        fm.output_dim = j.at("output_dim").get<Eigen::Index>();
        fm.bandwidth = j.at("bandwidth").get<double>();
        fm.seed = j.at("seed").get<std::uint64_t>();
        fm.omega = mat_from_json(j.at("omega"), fm.output_dim, in);
        fm.phase = vec_from_json(j.at("phase"), fm.output_dim);
        return fm;
    } catch (const Json::exception& e) {
        throw SchemaError(std::string("feature map: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// ParamPolicy

ParamPolicy ParamPolicy::linear(const FeatureMap& fm, Eigen::Index d_out) {
    ParamPolicy p;
    p.kind = Kind::Linear;
    p.d_in = fm.input_dim;
    p.d_out = d_out;
    p.features = fm;
    p.W = Mat::Zero(fm.output_dim, d_out);
    return p;
}

ParamPolicy ParamPolicy::from_gain(const Mat& K) {
    ParamPolicy p = linear(FeatureMap::identity(K.cols()), K.rows());
    p.W.topRows(K.cols()) = K.transpose();
    return p;
}

ParamPolicy ParamPolicy::mlp(Eigen::Index d_in, Eigen::Index hidden, Eigen::Index d_out,
                             std::uint64_t seed, double init_scale) {
    if (hidden < 1) throw PreconditionError("mlp needs at least one hidden unit");
    ParamPolicy p;
    p.kind = Kind::Mlp;
    p.d_in = d_in;
    p.d_out = d_out;
    p.seed = seed;
    Rng rng(derive_seed({seed, "mlp-init"}, 0));
    std::normal_distribution<double> N(0.0, init_scale);
    auto fill = [&](auto& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = N(rng);
    };
    p.W1.resize(hidden, d_in);
    p.b1.resize(hidden);
    p.W2.resize(d_out, hidden);
    p.b2 = Vec::Zero(d_out);
    fill(p.W1);
    fill(p.b1);
    fill(p.W2);
    return p;
}

Vec ParamPolicy::predict(const Vec& x) const {
    if (x.size() != d_in) throw DimensionError("policy input has wrong dimension");
    if (kind == Kind::Linear) return W.transpose() * features.featurize(x);
    const Vec h = (W1 * x + b1).array().tanh().matrix();
    return W2 * h + b2;
}

Mat ParamPolicy::predict_rows(const Mat& X) const {
    if (X.cols() != d_in) throw DimensionError("policy input has wrong dimension");
    if (kind == Kind::Linear) return features.featurize_rows(X) * W;
    Mat H = X * W1.transpose();
    H.rowwise() += b1.transpose();
    H = H.array().tanh().matrix();
    Mat out = H * W2.transpose();
    out.rowwise() += b2.transpose();
    return out;
}

Eigen::Index ParamPolicy::param_count() const {
    if (kind == Kind::Linear) return W.size();
    return W1.size() + b1.size() + W2.size() + b2.size();
}

Vec ParamPolicy::params() const {
    Vec out(param_count());
    Eigen::Index at = 0;
    if (kind == Kind::Linear) {
        append(out, at, W.data(), W.size());
    } else {
        append(out, at, W1.data(), W1.size());
        append(out, at, b1.data(), b1.size());
        append(out, at, W2.data(), W2.size());
        append(out, at, b2.data(), b2.size());
    }
    return out;
}

void ParamPolicy::set_params(const Vec& theta) {
    if (theta.size() != param_count()) throw DimensionError("parameter vector has wrong length");
    Eigen::Index at = 0;
    if (kind == Kind::Linear) {
        take(theta, at, W.data(), W.size());
    } else {
        take(theta, at, W1.data(), W1.size());
        take(theta, at, b1.data(), b1.size());
        take(theta, at, W2.data(), W2.size());
        take(theta, at, b2.data(), b2.size());
    }
}

Vec ParamPolicy::param_vjp(const Mat& X, const Mat& G) const {
    if (X.rows() != G.rows() || G.cols() != d_out || X.cols() != d_in)
        throw DimensionError("vjp inputs have inconsistent shapes");
    Vec out(param_count());
    Eigen::Index at = 0;
    if (kind == Kind::Linear) {
        const Mat gW = features.featurize_rows(X).transpose() * G;
        append(out, at, gW.data(), gW.size());
        return out;
    }
    Mat pre = X * W1.transpose();
    pre.rowwise() += b1.transpose();
    const Mat H = pre.array().tanh().matrix();
    const Mat gW2 = G.transpose() * H;                 // d_out x hidden
    const Vec gb2 = G.colwise().sum().transpose();
    const Mat dH = (G * W2).array() * (1.0 - H.array().square());  // n x hidden
    const Mat gW1 = dH.transpose() * X;
    const Vec gb1 = dH.colwise().sum().transpose();
    append(out, at, gW1.data(), gW1.size());
    append(out, at, gb1.data(), gb1.size());
    append(out, at, gW2.data(), gW2.size());
    append(out, at, gb2.data(), gb2.size());
    return out;
}

Mat ParamPolicy::gain() const {
    if (kind != Kind::Linear || features.kind != FeatureMap::Kind::IdentityBias)
        throw PreconditionError("gain() needs a linear policy on identity features");
    return W.topRows(d_in).transpose();
}

std::string_view to_string(ParamPolicy::Kind k) {
    return k == ParamPolicy::Kind::Linear ? "linear" : "mlp";
}

Json ParamPolicy::to_json() const {
    Json j{{"kind", to_string(kind)}, {"dims", {{"in", d_in}, {"out", d_out}}}, {"seed", seed}};
    if (kind == Kind::Linear) {
        j["features"] = features.to_json();
        j["weights"] = {{"W", mat_to_json(W)}};
    } else {
        j["hidden"] = hidden();
        j["weights"] = {{"W1", mat_to_json(W1)},
                        {"b1", vec_to_json(b1)},
                        {"W2", mat_to_json(W2)},
                        {"b2", vec_to_json(b2)}};
    }
    return j;
}

ParamPolicy ParamPolicy::from_json(const Json& j) {
    try {
        ParamPolicy p;
        const std::string kind = j.at("kind").get<std::string>();
        p.d_in = j.at("dims").at("in").get<Eigen::Index>();
        p.d_out = j.at("dims").at("out").get<Eigen::Index>();
        p.seed = j.value("seed", std::uint64_t{0});
        const Json& w = j.at("weights");
        if (kind == "linear") {
            p.kind = Kind::Linear;
            p.features = FeatureMap::from_json(j.at("features"));
            if (p.features.input_dim != p.d_in)
                throw SchemaError("feature map input does not match policy input");
            p.W = mat_from_json(w.at("W"), p.features.output_dim, p.d_out);
        } else if (kind == "mlp") {
            p.kind = Kind::Mlp;
            const Eigen::Index h = j.at("hidden").get<Eigen::Index>();
            p.W1 = mat_from_json(w.at("W1"), h, p.d_in);
            p.b1 = vec_from_json(w.at("b1"), h);
            p.W2 = mat_from_json(w.at("W2"), p.d_out, h);
            p.b2 = vec_from_json(w.at("b2"), p.d_out);
        } else {
            throw SchemaError("unknown policy kind '" + kind + "'");
        }
        return p;
    } catch (const Json::exception& e) {
        throw SchemaError(std::string("policy: ") + e.what());
    }
}

// ---------------------------------------------------------------------------
// Least squares

Mat fit_ridge(const Mat& X, const Mat& Y, double lambda, FitReport* report) {
    if (X.rows() < 1) throw PreconditionError("ridge needs at least one row");
    if (X.rows() != Y.rows()) throw DimensionError("ridge X and Y row counts differ");
    if (lambda < 0.0) throw PreconditionError("ridge lambda must be >= 0");

    Mat G = X.transpose() * X;
    G.diagonal().array() += lambda;
    Eigen::SelfAdjointEigenSolver<Mat> eig(G, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 1e-12 * std::max(hi, 1e-300)))
        throw SingularMatrixError("normal matrix is singular (rank-deficient design)");

    const Mat W = G.ldlt().solve(X.transpose() * Y);
    if (report) {
        report->rss = (X * W - Y).squaredNorm();
        report->param_norm = W.norm();
        report->condition = hi / lo;
        report->n = X.rows();
    }
    return W;
}

TwoStageFit fit_2sls(const Mat& z, const Mat& s, const Mat& a, const FeatureMap& instrument,
                     const FeatureMap& state, double lambda) {
    if (z.rows() != s.rows() || s.rows() != a.rows())
        throw DimensionError("2SLS inputs have different row counts");
    if (instrument.output_dim < state.output_dim)
        throw PreconditionError("order condition violated: fewer instrument features than state features");
    if (z.rows() <= instrument.output_dim)
        throw PreconditionError("2SLS needs more rows than instrument features");

    const Mat Zf = instrument.featurize_rows(z);
    const Mat Sf = state.featurize_rows(s);

    TwoStageFit fit;
    fit.stage1 = fit_ridge(Zf, Sf, lambda);
    const Mat Shat = Zf * fit.stage1;
    fit.stage2 = fit_ridge(Shat, a, lambda, &fit.report);
    fit.report.rss = (a - Sf * fit.stage2).squaredNorm();

    fit.l = ParamPolicy::linear(state, a.cols());
    fit.l.W = fit.stage2;
    fit.l_norm = fit.stage2.norm();

    // relevance on the non-constant blocks
    const bool zb = instrument.kind == FeatureMap::Kind::IdentityBias;
    const bool sb = state.kind == FeatureMap::Kind::IdentityBias;
    const Eigen::Index qz = Zf.cols() - (zb ? 1 : 0);
    const Eigen::Index qs = Sf.cols() - (sb ? 1 : 0);
    const Mat core = fit.stage1.topLeftCorner(qz, qs);
    Eigen::JacobiSVD<Mat> svd(core);
    fit.min_singular = svd.singularValues().minCoeff();

    const double n = static_cast<double>(Zf.rows());
    const double p = static_cast<double>(Zf.cols());
    const Mat resid = Sf - Shat;
    double fmin = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < qs; ++j) {
        const double rss = resid.col(j).squaredNorm();
        const double tss = (Sf.col(j).array() - Sf.col(j).mean()).square().sum();
        const double f = ((tss - rss) / static_cast<double>(qz)) / (rss / (n - p));
        fmin = std::min(fmin, f);
    }
    fit.f_ratio = fmin;
    return fit;
}

Vec numeric_grad(const std::function<double(const Vec&)>& f, const Vec& theta, double h) {
    if (!(h > 0.0)) throw PreconditionError("finite-difference step must be positive");
    Vec g(theta.size());
    Vec t = theta;
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
        t[i] = theta[i] + h;
        const double up = f(t);
        t[i] = theta[i] - h;
        const double down = f(t);
        t[i] = theta[i];
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

double squared_loss(const ParamPolicy& p, const Mat& X, const Mat& A) {
    return (A - p.predict_rows(X)).squaredNorm() / static_cast<double>(X.rows());
}

Vec squared_loss_grad(const ParamPolicy& p, const Mat& X, const Mat& A) {
    const Mat G = (-2.0 / static_cast<double>(X.rows())) * (A - p.predict_rows(X));
    return p.param_vjp(X, G);
}

int fit_gd(ParamPolicy& p, const Mat& X, const Mat& A, const GdOptions& opts) {
    Vec theta = p.params();
    for (int it = 1; it <= opts.max_iter; ++it) {
        const Vec g = squared_loss_grad(p, X, A);
        theta -= opts.step * g;
        p.set_params(theta);
        if (opts.step * g.cwiseAbs().maxCoeff() < opts.tol) return it;
    }
    return opts.max_iter;
}

}  // namespace c2l
