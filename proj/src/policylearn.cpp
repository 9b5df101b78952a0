#include "c2l/policylearn.hpp"

#include "c2l/independence.hpp"

#include <deque>
#include <fstream>

namespace c2l {

Json LearnerConfig::to_json() const {
    return Json{{"pi_kind", to_string(pi_kind)},
                {"mlp_hidden", mlp_hidden},
                {"f_features", to_string(f_features)},
                {"rff_features", rff_features},
                {"eta", eta},
                {"eta_f", f_step()},
                {"max_iter", max_iter},
                {"tol", tol},
                {"window", window},
                {"grad_tol", grad_tol},
                {"warm_start_bc", warm_start_bc},
                {"mirror_map", mirror_map},
                {"rollouts", rollouts},
                {"lambda", lambda},
                {"gd", {{"step", gd.step}, {"max_iter", gd.max_iter}, {"tol", gd.tol}}},
                {"seed", seed}};
}

namespace {

void pooled_pairs(const DemoSet& d, Mat& S, Mat& A) {
    std::vector<Vec> s, a;
    for (const auto& tr : d.trajectories) {
        for (std::size_t t = 0; t < tr.horizon(); ++t) {
            s.push_back(tr.states[t]);
            a.push_back(tr.actions[t]);
        }
    }
    if (s.empty()) throw EmptyResultError("dataset has no state-action pairs");
    S = stack_rows(s);
    A = stack_rows(a);
}

double max_abs(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

// Mirror map psi(W) = tr(W' M W) / 2 with M = L L' the feature second moment.
// OMD runs on V = L' W, where the gradient is L^-1 g.
struct Mirror {
    Mat L;  // empty means the identity map
    Eigen::Index d_out = 1;

    static Mirror of(const ParamPolicy& p, const Mat& X, bool enabled) {
        Mirror m;
        m.d_out = p.d_out;
        if (!enabled || p.kind != ParamPolicy::Kind::Linear) return m;
        const Mat F = p.features.featurize_rows(X);
        const Eigen::LLT<Mat> llt(F.transpose() * F / static_cast<double>(F.rows()));
        if (llt.info() != Eigen::Success) return m;
        const Mat L = llt.matrixL();
        if (!(L.diagonal().minCoeff() > 1e-8 * L.diagonal().maxCoeff())) return m;
        m.L = L;
        return m;
    }

    Vec to_dual(const Vec& w) const { return apply(w, [&](const Mat& W) { return Mat(L.transpose() * W); }); }
    Vec to_primal(const Vec& v) const {
        return apply(v, [&](const Mat& V) { return Mat(L.transpose().triangularView<Eigen::Upper>().solve(V)); });
    }
    Vec grad(const Vec& g) const {
        return apply(g, [&](const Mat& G) { return Mat(L.triangularView<Eigen::Lower>().solve(G)); });
    }

   private:
    template <class F>
    Vec apply(const Vec& x, F f) const {
        if (L.size() == 0) return x;
        const Eigen::Map<const Mat> X(x.data(), L.rows(), d_out);
        const Mat Y = f(Mat(X));
        return Eigen::Map<const Vec>(Y.data(), Y.size());
    }
};

}  // namespace

ParamPolicy fit_policy(const Mat& X, const Mat& A, const LearnerConfig& cfg) {
    if (cfg.pi_kind == ParamPolicy::Kind::Linear) {
        ParamPolicy p = ParamPolicy::linear(FeatureMap::identity(X.cols()), A.cols());
        const double lambda = cfg.lambda < 0.0 ? default_ridge(X.rows()) : cfg.lambda;
        p.W = fit_ridge(p.features.featurize_rows(X), A, lambda);
        return p;
    }
    ParamPolicy p = ParamPolicy::mlp(X.cols(), cfg.mlp_hidden, A.cols(), derive_seed({cfg.seed, "pi-init"}, 0));
    fit_gd(p, X, A, cfg.gd);
    return p;
}

ParamPolicy bc_fit(const DemoSet& d, const LearnerConfig& cfg) {
    d.validate();
    Mat S, A;
    pooled_pairs(d, S, A);
    return fit_policy(S, A, cfg);
}

ParamPolicy learn_policy_sim(const DemoSet& d, int k, const EnvSpec& env, const LearnerConfig& cfg) {
    if (k < 1) throw PreconditionError("lag must be >= 1");
    if (cfg.rollouts < 1) throw PreconditionError("rollout multiplicity must be >= 1");
    if (env.d_s != d.state_dim() || env.d_a != d.action_dim())
        throw DimensionError("simulator dimensions do not match the data");
    const ParamPolicy pi1 = bc_fit(d, cfg);
    const LaggedTripleSet t = extract_lagged_triples(d, k);
    const Eigen::Index n = t.rows();
    const int m = cfg.rollouts;
    Mat S(n * m, t.s.cols());
    Mat A(n * m, t.a.cols());
    for (Eigen::Index i = 0; i < n; ++i) {
        const Vec start = t.z.row(i).transpose();
        for (int j = 0; j < m; ++j) {
            const Eigen::Index row = i * m + j;
            S.row(row) = synth_rollout(env, pi1, start, k,
                                       derive_seed({cfg.seed, "synth"}, static_cast<std::uint64_t>(row)))
                             .transpose();
            A.row(row) = t.a.row(i);
        }
    }
    return fit_policy(S, A, cfg);
}

double minimax_loss(const ParamPolicy& pi, const ParamPolicy& f, const Mat& z, const Mat& s,
                    const Mat& a) {
    const Mat fz = f.predict_rows(z);
    const Mat r = a - pi.predict_rows(s);
    const double n = static_cast<double>(z.rows());
    return (2.0 * (r.array() * fz.array()).sum() - fz.squaredNorm()) / n;
}

MinimaxGrads minimax_grads(const ParamPolicy& pi, const ParamPolicy& f, const Mat& z, const Mat& s,
                           const Mat& a) {
    if (z.rows() != s.rows() || s.rows() != a.rows()) throw DimensionError("batch row counts differ");
    const double n = static_cast<double>(z.rows());
    const Mat fz = f.predict_rows(z);
    const Mat r = a - pi.predict_rows(s);
    MinimaxGrads g;
    g.loss = (2.0 * (r.array() * fz.array()).sum() - fz.squaredNorm()) / n;
    g.g_pi = pi.param_vjp(s, (-2.0 / n) * fz);
    g.g_f = f.param_vjp(z, (2.0 / n) * (r - fz));
    return g;
}

MinimaxState MinimaxState::start(const Vec& pi0, const Vec& f0) {
    MinimaxState st;
    st.pi = pi0;
    st.f = f0;
    st.momentum_pi = Vec::Zero(pi0.size());
    st.momentum_f = Vec::Zero(f0.size());
    return st;
}

MinimaxState omd_step(MinimaxState st, const Vec& g_pi, const Vec& g_f, double eta, double eta_f) {
    if (g_pi.size() != st.pi.size() || g_f.size() != st.f.size() ||
        st.momentum_pi.size() != st.pi.size() || st.momentum_f.size() != st.f.size())
        throw DimensionError("OMD gradient or momentum shape mismatch");
    st.pi -= eta * (2.0 * g_pi - st.momentum_pi);
    st.f += eta_f * (2.0 * g_f - st.momentum_f);
    st.momentum_pi = g_pi;
    st.momentum_f = g_f;
    ++st.iteration;
    return st;
}

ParamPolicy make_discriminator(const Mat& z, Eigen::Index d_a, const LearnerConfig& cfg) {
    if (cfg.f_features == FeatureMap::Kind::IdentityBias)
        return ParamPolicy::linear(FeatureMap::identity(z.cols()), d_a);
    const std::uint64_t fs = derive_seed({cfg.seed, "f-features"}, 0);
    return ParamPolicy::linear(
        FeatureMap::random_fourier(z.cols(), cfg.rff_features, median_bandwidth(z, fs), fs), d_a);
}

OfflineResult learn_policy_offline(const DemoSet& d, int k, const LearnerConfig& cfg) {
    if (k < 1) throw PreconditionError("lag must be >= 1");
    if (cfg.eta < 0.0 || cfg.f_step() < 0.0) throw PreconditionError("learning rates must be >= 0");
    const LaggedTripleSet t = extract_lagged_triples(d, k);

    OfflineResult out;
    if (cfg.warm_start_bc) {
        out.policy = bc_fit(d, cfg);
    } else if (cfg.pi_kind == ParamPolicy::Kind::Linear) {
        out.policy = ParamPolicy::linear(FeatureMap::identity(t.s.cols()), t.a.cols());
    } else {
        out.policy = ParamPolicy::mlp(t.s.cols(), cfg.mlp_hidden, t.a.cols(), derive_seed({cfg.seed, "pi-init"}, 0));
    }
    out.discriminator = make_discriminator(t.z, t.a.cols(), cfg);

    const Mirror mp = Mirror::of(out.policy, t.s, cfg.mirror_map);
    const Mirror mf = Mirror::of(out.discriminator, t.z, cfg.mirror_map);

    const Vec pi0 = out.policy.params(), f0 = out.discriminator.params();
    const Vec vpi0 = mp.to_dual(pi0), vf0 = mf.to_dual(f0);
    auto primal_pi = [&](const Vec& v) { return Vec(pi0 + mp.to_primal(v - vpi0)); };
    auto primal_f = [&](const Vec& v) { return Vec(f0 + mf.to_primal(v - vf0)); };

    MinimaxState st = MinimaxState::start(vpi0, vf0);
    std::deque<Vec> hist_pi, hist_f;
    hist_pi.push_back(st.pi);
    hist_f.push_back(st.f);
    Vec prev_pi = st.pi, prev_f = st.f;
    for (int it = 0; it < cfg.max_iter; ++it) {
        out.policy.set_params(primal_pi(st.pi));
        out.discriminator.set_params(primal_f(st.f));
        MinimaxGrads g = minimax_grads(out.policy, out.discriminator, t.z, t.s, t.a);
        g.g_pi = mp.grad(g.g_pi);
        g.g_f = mf.grad(g.g_f);
        st = omd_step(std::move(st), g.g_pi, g.g_f, cfg.eta, cfg.f_step());

        TraceRow row;
        row.iteration = st.iteration;
        row.loss = g.loss;
        row.grad_pi = g.g_pi.norm();
        row.grad_f = g.g_f.norm();
        row.delta_pi = max_abs(st.pi - prev_pi);
        row.delta_f = max_abs(st.f - prev_f);
        st.trace.push_back(row);
        prev_pi = st.pi;
        prev_f = st.f;

        hist_pi.push_back(st.pi);
        hist_f.push_back(st.f);
        if (static_cast<int>(hist_pi.size()) > cfg.window + 1) {
            hist_pi.pop_front();
            hist_f.pop_front();
        }
        if (static_cast<int>(hist_pi.size()) == cfg.window + 1) {
            const double change = std::max(max_abs(st.pi - hist_pi.front()), max_abs(st.f - hist_f.front()));
            const double grad = std::max(max_abs(g.g_pi), max_abs(g.g_f));
            if (change < cfg.tol && grad < cfg.grad_tol) {
                out.converged = true;
                break;
            }
        }
    }
    st.pi = primal_pi(st.pi);
    st.f = primal_f(st.f);
    out.policy.set_params(st.pi);
    out.discriminator.set_params(st.f);
    out.state = std::move(st);
    return out;
}

ParamPolicy gmm_closed_form(const Mat& z, const Mat& s, const Mat& a, const FeatureMap& instrument,
                            const FeatureMap& state) {
    if (instrument.output_dim < state.output_dim)
        throw PreconditionError("order condition violated: fewer instrument features than state features");
    const Mat Zf = instrument.featurize_rows(z);
    const Mat Sf = state.featurize_rows(s);
    const double n = static_cast<double>(z.rows());
    const Mat Mzz = Zf.transpose() * Zf / n;
    const Mat Mzs = Zf.transpose() * Sf / n;
    const Mat Mza = Zf.transpose() * a / n;
    const auto zz = Mzz.ldlt();
    if (zz.info() != Eigen::Success || !(zz.vectorD().minCoeff() > 1e-12 * zz.vectorD().maxCoeff()))
        throw SingularMatrixError("instrument second-moment matrix is singular");
    const Mat WzS = zz.solve(Mzs);
    const Mat lhs = Mzs.transpose() * WzS;
    const auto ll = lhs.ldlt();
    if (ll.info() != Eigen::Success || !(ll.vectorD().minCoeff() > 1e-12 * ll.vectorD().maxCoeff()))
        throw SingularMatrixError("GMM normal matrix is singular");
    ParamPolicy p = ParamPolicy::linear(state, a.cols());
    p.W = ll.solve(WzS.transpose() * Mza);
    return p;
}

double minimax_inner_max(const ParamPolicy& pi, const FeatureMap& instrument, const Mat& z,
                         const Mat& s, const Mat& a) {
    const Mat Zf = instrument.featurize_rows(z);
    const double n = static_cast<double>(z.rows());
    const Mat Mzz = Zf.transpose() * Zf / n;
    const Mat m = Zf.transpose() * (a - pi.predict_rows(s)) / n;
    return (m.transpose() * Mzz.ldlt().solve(m)).trace();
}

void write_trace_csv(const std::vector<TraceRow>& trace, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "iteration,loss,grad_pi,grad_f,delta_pi,delta_f\n";
    for (const auto& r : trace)
        out << r.iteration << ',' << format_real(r.loss) << ',' << format_real(r.grad_pi) << ','
            << format_real(r.grad_f) << ',' << format_real(r.delta_pi) << ',' << format_real(r.delta_f)
            << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace c2l
