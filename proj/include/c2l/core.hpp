#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace c2l {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Json = nlohmann::json;
using Rng = std::mt19937_64;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
public:
    using Error::Error;
};

class SchemaError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class PreconditionError : public Error {
public:
    using Error::Error;
};

class EmptyResultError : public Error {
public:
    using Error::Error;
};

class SingularMatrixError : public Error {
public:
    using Error::Error;
};

class DegenerateDataError : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

struct SeedSpec {
    std::uint64_t master_seed = 0;
    std::string stream_label;
};

/// Child seed for (master, label, index). Pure; uses a splitmix64 finalizer
/// over an FNV-1a hash of the label.
std::uint64_t derive_seed(const SeedSpec& spec, std::uint64_t index);

inline Rng make_rng(const SeedSpec& spec, std::uint64_t index) {
    return Rng(derive_seed(spec, index));
}

// ---------------------------------------------------------------------------
// Distributions
// ---------------------------------------------------------------------------

enum class Distribution { Gaussian, Uniform, Gamma, Exponential, Lognormal, Beta, Laplace };

Distribution parse_distribution(std::string_view name);
std::string_view to_string(Distribution d);
const std::vector<Distribution>& all_distributions();

/// Skewness of the standardized family (analytic).
double analytic_skewness(Distribution d);

/// Draws from a named family affinely mapped to mean 0, variance 1.
/// Pre-standardization parameters: gamma(2, 1), beta(2, 5), lognormal(0, 0.5),
/// exponential(1), laplace(0, 1), uniform(0, 1).
class StandardizedSampler {
public:
    StandardizedSampler(Distribution dist, std::uint64_t seed);

    double next();
    Vec draw(Eigen::Index dim);

    Distribution distribution() const { return dist_; }

private:
    Distribution dist_;
    Rng rng_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    std::gamma_distribution<double> gamma2_{2.0, 1.0};
    std::gamma_distribution<double> gamma5_{5.0, 1.0};
    std::exponential_distribution<double> exponential_{1.0};
    std::lognormal_distribution<double> lognormal_{0.0, 0.5};
};

// ---------------------------------------------------------------------------
// Trajectories and datasets
// ---------------------------------------------------------------------------

struct Trajectory {
    std::vector<Vec> states;   // T + 1
    std::vector<Vec> actions;  // T
    std::optional<std::vector<Vec>> latents;
    std::optional<std::vector<double>> rewards;

    std::size_t horizon() const { return actions.size(); }
    Eigen::Index state_dim() const { return states.empty() ? 0 : states.front().size(); }
    Eigen::Index action_dim() const { return actions.empty() ? 0 : actions.front().size(); }

    /// Throws DimensionError on any length or width mismatch or non-finite entry.
    void validate() const;

    bool operator==(const Trajectory& other) const;
};

struct DemoSet {
    std::vector<Trajectory> trajectories;
    Json meta = Json::object();

    Eigen::Index state_dim() const;
    Eigen::Index action_dim() const;
    std::size_t total_steps() const;

    void validate() const;

    bool operator==(const DemoSet& other) const;
};

inline constexpr int kDemoSetVersion = 1;

void save_demoset(const DemoSet& d, const std::filesystem::path& path);
DemoSet load_demoset(const std::filesystem::path& path);

/// Shortest text that still carries 17 significant digits; exact round trip.
std::string format_real(double x);

// ---------------------------------------------------------------------------
// Lagged samples
// ---------------------------------------------------------------------------

struct LaggedTripleSet {
    int lag = 1;
    Mat z;  // s_{t-lag}
    Mat s;  // s_t
    Mat a;  // a_t
    /// Trajectory index and time step of every row.
    std::vector<std::pair<int, int>> index;

    Eigen::Index rows() const { return z.rows(); }
};

/// Rows (s_{t-k}, s_t, a_t) for t in [k, T-1], trajectory-major.
/// Throws EmptyResultError when every trajectory is too short.
LaggedTripleSet extract_lagged_triples(const DemoSet& d, int lag);

/// Keeps the rows at the given positions, in order.
LaggedTripleSet select_rows(const LaggedTripleSet& t, const std::vector<Eigen::Index>& rows);

/// Stacks a list of equal-width vectors into a row matrix.
Mat stack_rows(const std::vector<Vec>& rows);

}  // namespace c2l
