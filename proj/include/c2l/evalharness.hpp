#pragma once

#include "c2l/core.hpp"
#include "c2l/envsim.hpp"
#include "c2l/ivfind.hpp"
#include "c2l/policylearn.hpp"

#include <filesystem>
#include <map>
#include <optional>

namespace c2l {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// `count` states from expert visitation under the data-generating process.
Mat expert_probes(const EnvSpec& env, const ExpertSpec& expert, const ConfounderSpec& cs, int count,
                  std::uint64_t seed);

/// Mean of |pi(s) - ref(s)|^2 over probe rows.
double action_mse(const ParamPolicy& pi, const ParamPolicy& reference, const Mat& probes);

/// Mean of |pi(s_i) - a_i|^2 over held-out pairs.
double action_mse(const ParamPolicy& pi, const Mat& probes, const Mat& actions);

struct ValueAnchors {
    double j_exp = 0.0;
    double j_rand = 0.0;
};

/// Expert and zero-mean random-policy returns on the clean env.
ValueAnchors value_anchors(const EnvSpec& env, const ExpertSpec& expert, int episodes, std::uint64_t seed);

struct PolicyValue {
    double j_raw = 0.0;
    double j_norm = 0.0;
};

/// j_norm = (j_raw - J_rand) / (J_exp - J_rand); DegenerateDataError when the
/// anchors coincide.
PolicyValue policy_value(const ParamPolicy& pi, const EnvSpec& env, int episodes, std::uint64_t seed,
                         const ValueAnchors& anchors);
PolicyValue policy_value(const ParamPolicy& pi, const EnvSpec& env, const ExpertSpec& expert, int episodes,
                         std::uint64_t seed);

// ---------------------------------------------------------------------------
// Rows
// ---------------------------------------------------------------------------

struct MetricRow {
    std::string experiment;
    std::string env;
    std::string method;
    int n_traj = 0;
    int tau = 0;
    std::string dist;
    std::uint64_t seed = 0;
    std::optional<double> mse;
    std::optional<double> j_raw;
    std::optional<double> j_norm;
    std::optional<int> selected_lag;
    std::optional<bool> iv_correct;
    std::optional<double> wall_ms;

    /// (experiment, env, method, n_traj, tau, dist, seed)
    std::string key() const;
    std::string to_csv() const;
    static MetricRow from_csv(const std::string& line);

    bool operator==(const MetricRow& other) const = default;
};

inline constexpr const char* kMetricHeader =
    "experiment,env,method,n_traj,tau,dist,seed,mse,j_raw,j_norm,selected_lag,iv_correct,wall_ms";
inline constexpr const char* kAggregateHeader = "experiment,env,method,n_traj,tau,dist,metric,mean,std,count";

std::vector<MetricRow> read_metric_rows(const std::filesystem::path& path);

struct AggregateRow {
    std::string experiment;
    std::string env;
    std::string method;
    int n_traj = 0;
    int tau = 0;
    std::string dist;
    std::string metric;
    double mean = 0.0;
    double std = 0.0;
    int count = 0;

    std::string to_csv() const;
};

/// Mean, sample standard deviation and count per cell and metric, in first-seen cell order.
std::vector<AggregateRow> aggregate(const std::vector<MetricRow>& rows);
void write_aggregates(const std::vector<AggregateRow>& rows, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

enum class Experiment { T1, T2 };
std::string_view to_string(Experiment e);
Experiment parse_experiment(std::string_view name);

struct SweepConfig {
    Experiment experiment = Experiment::T1;
    /// Base environment; each cell overrides its noise family.
    EnvSpec env = default_linear_env(0);
    double sigma_a = 0.1;
    double sigma_u = 1.0;
    bool geometric_weights = false;

    std::vector<int> n_traj{10, 20, 30, 40, 50};
    std::vector<int> taus{3, 4, 5, 6, 7};
    std::vector<Distribution> dists = all_distributions();
    int seeds = 10;
    std::uint64_t seed = 0;

    IVFindConfig ivfind{};
    LearnerConfig learner{};
    int episodes = 20;
    int probes = 2000;

    int workers = 1;
    bool record_timing = false;

    /// Grid defaults for T1 or T2.
    static SweepConfig defaults(Experiment e);
    void validate() const;
    Json to_json() const;
};

struct SweepFailure {
    std::string key;
    std::string message;
};

struct SweepResult {
    std::vector<MetricRow> rows;  // every row in the file, in grid order
    std::vector<SweepFailure> failures;
    int skipped = 0;  // rows already present before this run
    int attempted = 0;

    double success_rate() const;
};

/// Identification-accuracy grid over N x tau x distribution x seed.
SweepResult run_sweep_T1(const SweepConfig& cfg, const std::filesystem::path& out_path);

/// Policy-learning grid over N x tau x distribution x seed x {confounded, unconfounded}.
SweepResult run_sweep_T2(const SweepConfig& cfg, const std::filesystem::path& out_path);

SweepResult run_sweep(const SweepConfig& cfg, const std::filesystem::path& out_path);

/// Demonstration specs for one cell.
struct CellSpecs {
    EnvSpec env;
    ExpertSpec expert;
    ConfounderSpec confounder;
};
CellSpecs cell_specs(const SweepConfig& cfg, int tau, Distribution dist, bool confounded);

/// Data seed of replicate `index`.
std::uint64_t replicate_seed(const SweepConfig& cfg, int index);

// ---------------------------------------------------------------------------
// Charts
// ---------------------------------------------------------------------------

struct ChartSeries {
    std::string label;
    std::vector<std::pair<double, double>> points;
};

struct Chart {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<ChartSeries> series;
};

std::string svg_line_chart(const Chart& chart);

/// Charts mirroring the experiment figures, keyed by file name.
std::map<std::string, Chart> sweep_charts(Experiment e, const std::vector<AggregateRow>& agg);

}  // namespace c2l
