#pragma once

#include "c2l/core.hpp"
#include "c2l/estimators.hpp"
#include "c2l/independence.hpp"

#include <optional>

namespace c2l {

struct ResidualConfig {
    enum class Instrument { Identity, RandomFourier };
    Instrument instrument = Instrument::Identity;
    Eigen::Index rff_features = 100;
    /// Negative means default_ridge(n); 0 keeps the moment identity exact.
    double lambda = 0.0;
    std::uint64_t feature_seed = 0;
};

struct IVFindConfig {
    int w = 6;
    double alpha = 0.05;
    IndependenceOptions test{};
    ResidualConfig residual{};
    double min_singular = 1e-3;
    double min_f = 10.0;
    /// Evaluate every lag instead of stopping at the first valid one.
    bool exhaustive = false;
    /// Permute whole trajectories (time-aligned) when all have equal length.
    bool trajectory_blocks = true;
    /// Re-project the residual off the instrument features in every permutation.
    bool project_instrument = true;

    Json to_json() const;
};

enum class Decision { Valid, Rejected, Degenerate, Weak };
std::string_view to_string(Decision d);

struct CandidateReport {
    int lag = 0;
    HSICResult hsic;
    double min_singular = 0.0;
    double f_ratio = 0.0;
    double l_norm = 0.0;
    Decision decision = Decision::Rejected;

    Json to_json() const;
};

struct IVSearchResult {
    std::optional<int> selected_lag;
    std::vector<CandidateReport> reports;
    Json params = Json::object();

    Json to_json() const;
};

struct Residual {
    Mat R;  // n x d_a
    TwoStageFit fit;
    FeatureMap instrument;
};

Residual build_residual(const LaggedTripleSet& triples, const ResidualConfig& cfg);

/// Candidate lags 1..w in order; the first with decision Valid is selected.
IVSearchResult find_valid_iv(const DemoSet& d, const IVFindConfig& cfg, std::uint64_t seed);

/// Single-lag evaluation used by find_valid_iv.
CandidateReport evaluate_candidate(const DemoSet& d, int lag, const IVFindConfig& cfg,
                                   std::uint64_t seed);

/// Fraction of results whose selected lag equals true_tau; none counts as wrong.
double iv_accuracy(const std::vector<IVSearchResult>& results, int true_tau);

}  // namespace c2l
