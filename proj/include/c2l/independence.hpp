#pragma once

#include "c2l/core.hpp"

#include <cstdint>
#include <string_view>
#include <vector>

namespace c2l {

struct KernelSpec {
    double bandwidth = 1.0;
};

enum class PValueMethod { Permutation, Gamma };

PValueMethod parse_pvalue_method(std::string_view name);
std::string_view to_string(PValueMethod m);

struct HSICResult {
    double statistic = 0.0;
    double p_value = 1.0;
    PValueMethod method = PValueMethod::Permutation;
    Eigen::Index n = 0;
    double bw_x = 0.0;
    double bw_y = 0.0;
    int permutations = 0;

    Json to_json() const;
};

/// Median pairwise Euclidean distance over at most 1000 rows (seeded subsample).
/// Throws DegenerateDataError when the median distance is zero.
double median_bandwidth(const Mat& X, std::uint64_t seed = 0);

/// Gaussian Gram matrix exp(-|xi - xj|^2 / (2 bw^2)).
Mat gram(const Mat& X, const KernelSpec& k);

/// Biased HSIC V-statistic (1/n^2) tr(K H L H).
double hsic_stat(const Mat& K, const Mat& L);

/// How rows are shuffled under the null.
/// Rows: uniform permutation of all rows of Y.
/// Blocks: rows come in `block_count` equal, time-aligned blocks (one per
/// trajectory); whole blocks of Y are permuted, keeping within-block order.
struct PermutationScheme {
    enum class Kind { Rows, Blocks } kind = Kind::Rows;
    Eigen::Index block_count = 0;
};

HSICResult hsic_pvalue_permutation(const Mat& X, const Mat& Y, int permutations,
                                   std::uint64_t seed, const PermutationScheme& scheme = {});

/// Permutation test for a regression residual X that was fitted to be
/// orthogonal to the columns of F (features of the rows of Y). Every pairing,
/// the observed one included, first projects X off the paired rows of F, so
/// the null carries the same orthogonality constraint as the data.
HSICResult hsic_pvalue_projected(const Mat& X, const Mat& Y, const Mat& F, int permutations,
                                 std::uint64_t seed, const PermutationScheme& scheme = {});

/// Gamma approximation of the null (moment matched). Needs n >= 100. Falls back
/// to a permutation test (200 draws, `fallback_seed`) if the moments are not positive.
HSICResult hsic_pvalue_gamma(const Mat& X, const Mat& Y, std::uint64_t fallback_seed = 0);

struct IndependenceOptions {
    double alpha = 0.05;
    PValueMethod method = PValueMethod::Permutation;
    int permutations = 200;
    /// Seeded row subsample above this size; 0 disables the cap.
    Eigen::Index sample_cap = 2000;
    PermutationScheme scheme{};
};

struct IndependenceDecision {
    bool reject = false;
    HSICResult result;
};

/// reject = p < alpha. When `projection` is given (one row per sample) and the
/// method is permutation, the projected permutation test is used.
IndependenceDecision test_independence(const Mat& X, const Mat& Y,
                                       const IndependenceOptions& opts, std::uint64_t seed,
                                       const Mat* projection = nullptr);

/// Deterministic shuffle used by the permutation null.
void seeded_shuffle(std::vector<Eigen::Index>& v, Rng& rng);

}  // namespace c2l
