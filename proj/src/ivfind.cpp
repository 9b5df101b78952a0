#include "c2l/ivfind.hpp"

#include <limits>

namespace c2l {

std::string_view to_string(Decision d) {
    switch (d) {
        case Decision::Valid: return "valid";
        case Decision::Rejected: return "rejected";
        case Decision::Degenerate: return "degenerate";
        case Decision::Weak: return "weak";
    }
    return "rejected";
}

Json IVFindConfig::to_json() const {
    return Json{{"w", w},
                {"alpha", alpha},
                {"method", to_string(test.method)},
                {"permutations", test.permutations},
                {"sample_cap", test.sample_cap},
                {"instrument_features",
                 residual.instrument == ResidualConfig::Instrument::Identity ? "identity_bias"
                                                                             : "random_fourier"},
                {"min_singular", min_singular},
                {"min_f", min_f},
                {"exhaustive", exhaustive},
                {"trajectory_blocks", trajectory_blocks},
                {"project_instrument", project_instrument}};
}

Json CandidateReport::to_json() const {
    return Json{{"lag", lag},
                {"hsic", hsic.to_json()},
                {"min_singular", min_singular},
                {"f_ratio", f_ratio},
                {"l_norm", l_norm},
                {"decision", to_string(decision)}};
}

Json IVSearchResult::to_json() const {
    Json reps = Json::array();
    for (const auto& r : reports) reps.push_back(r.to_json());
    return Json{{"selected_lag", selected_lag ? Json(*selected_lag) : Json(nullptr)},
                {"reports", reps},
                {"params", params}};
}

Residual build_residual(const LaggedTripleSet& triples, const ResidualConfig& cfg) {
    if (triples.rows() == 0) throw EmptyResultError("no triples");
    const Eigen::Index ds = triples.s.cols();
    const FeatureMap state = FeatureMap::identity(ds);
    FeatureMap instrument = FeatureMap::identity(triples.z.cols());
    if (cfg.instrument == ResidualConfig::Instrument::RandomFourier) {
        instrument = FeatureMap::random_fourier(triples.z.cols(), cfg.rff_features,
                                                median_bandwidth(triples.z, cfg.feature_seed),
                                                cfg.feature_seed);
    }
    const double lambda = cfg.lambda < 0.0 ? default_ridge(triples.rows()) : cfg.lambda;
    Residual out;
    out.fit = fit_2sls(triples.z, triples.s, triples.a, instrument, state, lambda);
    out.R = triples.a - out.fit.l.predict_rows(triples.s);
    out.instrument = std::move(instrument);
    return out;
}

CandidateReport evaluate_candidate(const DemoSet& d, int lag, const IVFindConfig& cfg,
                                   std::uint64_t seed) {
    const LaggedTripleSet triples = extract_lagged_triples(d, lag);
    CandidateReport rep;
    rep.lag = lag;
    Residual res;
    try {
        res = build_residual(triples, cfg.residual);
    } catch (const SingularMatrixError&) {
        rep.decision = Decision::Degenerate;
        rep.hsic.n = triples.rows();
        rep.hsic.p_value = std::numeric_limits<double>::quiet_NaN();
        rep.hsic.statistic = std::numeric_limits<double>::quiet_NaN();
        return rep;
    }

    rep.min_singular = res.fit.min_singular;
    rep.f_ratio = res.fit.f_ratio;
    rep.l_norm = res.fit.l_norm;

    IndependenceOptions opts = cfg.test;
    opts.alpha = cfg.alpha;
    if (cfg.trajectory_blocks) {
        bool equal = true;
        for (const auto& tr : d.trajectories) equal = equal && tr.horizon() == d.trajectories.front().horizon();
        if (equal && d.trajectories.size() > 1)
            opts.scheme = {PermutationScheme::Kind::Blocks, static_cast<Eigen::Index>(d.trajectories.size())};
    }
    Mat F;
    if (cfg.project_instrument) F = res.instrument.featurize_rows(triples.z);
    // HSIC is reported for every candidate, including weak or degenerate ones
    const auto dec = test_independence(res.R, triples.z, opts, derive_seed({seed, "ivfind"}, lag),
                                       cfg.project_instrument ? &F : nullptr);
    rep.hsic = dec.result;

    if (!(rep.l_norm > 1e-8)) {
        rep.decision = Decision::Degenerate;
    } else if (!(rep.min_singular > cfg.min_singular) || !(rep.f_ratio > cfg.min_f)) {
        rep.decision = Decision::Weak;
    } else {
        rep.decision = dec.reject ? Decision::Rejected : Decision::Valid;
    }
    return rep;
}

IVSearchResult find_valid_iv(const DemoSet& d, const IVFindConfig& cfg, std::uint64_t seed) {
    if (cfg.w < 1) throw PreconditionError("w must be >= 1");
    d.validate();
    for (const auto& tr : d.trajectories)
        if (static_cast<int>(tr.horizon()) <= cfg.w)
            throw PreconditionError("every trajectory must be longer than w");

    IVSearchResult out;
    out.params = cfg.to_json();
    out.params["seed"] = seed;
    for (int k = 1; k <= cfg.w; ++k) {
        out.reports.push_back(evaluate_candidate(d, k, cfg, seed));
        if (out.reports.back().decision == Decision::Valid) {
            if (!out.selected_lag) out.selected_lag = k;
            if (!cfg.exhaustive) break;
        }
    }
    return out;
}

double iv_accuracy(const std::vector<IVSearchResult>& results, int true_tau) {
    if (results.empty()) throw PreconditionError("iv_accuracy needs at least one result");
    int hits = 0;
    for (const auto& r : results)
        if (r.selected_lag && *r.selected_lag == true_tau) ++hits;
    return static_cast<double>(hits) / static_cast<double>(results.size());
}

}  // namespace c2l
