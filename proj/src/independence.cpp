#include "c2l/independence.hpp"

#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace c2l {

PValueMethod parse_pvalue_method(std::string_view name) {
    if (name == "permutation") return PValueMethod::Permutation;
    if (name == "gamma") return PValueMethod::Gamma;
    throw ConfigError("unknown p-value method '" + std::string(name) + "'");
}

std::string_view to_string(PValueMethod m) {
    return m == PValueMethod::Permutation ? "permutation" : "gamma";
}

Json HSICResult::to_json() const {
    return Json{{"stat", statistic}, {"p", p_value},   {"method", to_string(method)},
                {"n", n},            {"bw_x", bw_x},   {"bw_y", bw_y},
                {"B", permutations}};
}

void seeded_shuffle(std::vector<Eigen::Index>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(v[i - 1], v[j]);
    }
}

double median_bandwidth(const Mat& X, std::uint64_t seed) {
    const Eigen::Index n = X.rows();
    if (n < 2) throw PreconditionError("median bandwidth needs at least two rows");

    std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
    std::iota(rows.begin(), rows.end(), Eigen::Index{0});
    constexpr Eigen::Index kCap = 1000;
    if (n > kCap) {
        Rng rng(seed);
        seeded_shuffle(rows, rng);
        rows.resize(kCap);
        std::sort(rows.begin(), rows.end());
    }

    const std::size_t m = rows.size();
    std::vector<double> d;
    d.reserve(m * (m - 1) / 2);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = i + 1; j < m; ++j)
            d.push_back((X.row(rows[i]) - X.row(rows[j])).norm());

    const std::size_t mid = d.size() / 2;
    std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
    double med = d[mid];
    if (d.size() % 2 == 0) {
        const double lower = *std::max_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid));
        med = 0.5 * (med + lower);
    }
    if (!(med > 0.0)) throw DegenerateDataError("median pairwise distance is zero (identical rows)");
    return med;
}

Mat gram(const Mat& X, const KernelSpec& k) {
    if (!(k.bandwidth > 0.0)) throw PreconditionError("kernel bandwidth must be positive");
    const Eigen::Index n = X.rows();
    const Mat Xt = X.transpose();
    const double scale = -1.0 / (2.0 * k.bandwidth * k.bandwidth);
    Mat K(n, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        K(j, j) = 1.0;
        for (Eigen::Index i = j + 1; i < n; ++i) {
            K(i, j) = std::exp((Xt.col(i) - Xt.col(j)).squaredNorm() * scale);
        }
    }
    K.triangularView<Eigen::StrictlyUpper>() = K.transpose();
    return K;
}

namespace {

void center_in_place(Mat& K) {
    const Vec col_mean = K.colwise().mean().transpose();
    const double all = col_mean.mean();
    // K is symmetric, so row means equal column means
    for (Eigen::Index j = 0; j < K.cols(); ++j)
        K.col(j).array() -= col_mean.array() + (col_mean[j] - all);
}

Mat double_center(Mat K) {
    center_in_place(K);
    return K;
}

double full_trace(const Mat& Kc, const Mat& L) {
    return (Kc.array() * L.array()).sum();
}

using MatF = Eigen::MatrixXf;

/// sum_ij Kc(i,j) L(p(i), p(j)) over the lower triangle of the symmetric Kc.
double permuted_trace(const MatF& Kc, const MatF& L, const std::vector<Eigen::Index>& p) {
    const Eigen::Index n = Kc.rows();
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        const float* kc = Kc.col(i).data();
        const float* lc = L.col(p[i]).data();
        double off = 0.0;
        for (Eigen::Index j = i + 1; j < n; ++j) off += kc[j] * lc[p[j]];
        total += kc[i] * lc[p[i]] + 2.0 * off;
    }
    return total;
}

/// Both trace routines read only the lower triangle (including the diagonal).
/// Same sum when whole blocks of length m move together, keeping the
/// within-block order; blocks[b] is the source block of block b.
double block_permuted_trace(const MatF& Kc, const MatF& L, const std::vector<Eigen::Index>& blocks,
                            Eigen::Index m) {
    const Eigen::Index nb = static_cast<Eigen::Index>(blocks.size());
    double total = 0.0;
    for (Eigen::Index c = 0; c < nb; ++c) {
        const Eigen::Index pc = blocks[static_cast<std::size_t>(c)];
        for (Eigen::Index t = 0; t < m; ++t) {
            const auto kc = Kc.col(c * m + t);
            const auto lc = L.col(pc * m + t);
            double off = 0.0;
            for (Eigen::Index b = c + 1; b < nb; ++b)
                off += kc.segment(b * m, m).dot(lc.segment(blocks[static_cast<std::size_t>(b)] * m, m));
            const Eigen::Index rest = m - t - 1;
            off += kc.segment(c * m + t + 1, rest).dot(lc.segment(pc * m + t + 1, rest));
            total += static_cast<double>(kc[c * m + t]) * lc[pc * m + t] + 2.0 * off;
        }
    }
    return total;
}

void check_pair(const Mat& X, const Mat& Y) {
    if (X.rows() != Y.rows()) throw DimensionError("X and Y must have the same number of rows");
}

}  // namespace

double hsic_stat(const Mat& K, const Mat& L) {
    if (K.rows() != K.cols() || L.rows() != L.cols() || K.rows() != L.rows())
        throw DimensionError("HSIC needs two square matrices of equal size");
    const double n = static_cast<double>(K.rows());
    return full_trace(double_center(K), L) / (n * n);
}

HSICResult hsic_pvalue_permutation(const Mat& X, const Mat& Y, int permutations,
                                   std::uint64_t seed, const PermutationScheme& scheme) {
    check_pair(X, Y);
    const Eigen::Index n = X.rows();
    if (permutations < 50) throw PreconditionError("permutation test needs B >= 50");
    if (n < 20) throw PreconditionError("permutation test needs n >= 20");

    HSICResult r;
    r.method = PValueMethod::Permutation;
    r.n = n;
    r.permutations = permutations;
    r.bw_x = median_bandwidth(X, seed);
    r.bw_y = median_bandwidth(Y, seed);

    Eigen::Index block_len = 0;
    if (scheme.kind == PermutationScheme::Kind::Blocks) {
        if (scheme.block_count < 2 || n % scheme.block_count != 0)
            throw PreconditionError("block permutation needs n divisible into >= 2 equal blocks");
        block_len = n / scheme.block_count;
    }

    MatF Kc, L;
    {
        Mat K = gram(X, {r.bw_x});
        center_in_place(K);
        const Mat Ld = gram(Y, {r.bw_y});
        r.statistic = full_trace(K, Ld) / (static_cast<double>(n) * static_cast<double>(n));
        Kc = K.cast<float>();
        L = Ld.cast<float>();
    }

    // replicates and the observed pairing go through the same summation
    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::vector<Eigen::Index> blocks(static_cast<std::size_t>(scheme.block_count));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::iota(blocks.begin(), blocks.end(), Eigen::Index{0});
    auto trace = [&]() {
        return block_len == 0 ? permuted_trace(Kc, L, perm) : block_permuted_trace(Kc, L, blocks, block_len);
    };
    const double observed = trace();

    Rng rng(derive_seed({seed, "hsic-permutation"}, 0));
    int exceed = 0;
    for (int b = 0; b < permutations; ++b) {
        if (block_len == 0) {
            std::iota(perm.begin(), perm.end(), Eigen::Index{0});
            seeded_shuffle(perm, rng);
        } else {
            std::iota(blocks.begin(), blocks.end(), Eigen::Index{0});
            seeded_shuffle(blocks, rng);
        }
        if (trace() >= observed) ++exceed;
    }
    r.p_value = (1.0 + exceed) / (1.0 + permutations);
    return r;
}

namespace {

/// Lower triangle of the Gaussian Gram of X (float), plus its row sums.
void lower_gram(const Mat& X, double bw, MatF& K, Eigen::VectorXd& rowsum) {
    const Eigen::Index n = X.rows();
    const float scale = static_cast<float>(-1.0 / (2.0 * bw * bw));
    const Eigen::MatrixXf Xt = X.transpose().cast<float>();
    rowsum.setZero(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const Eigen::Index len = n - j;
        auto col = K.col(j).segment(j, len);
        if (Xt.rows() == 1) {
            const auto x = Xt.row(0).segment(j, len).array();
            col = ((x - Xt(0, j)).square() * scale).exp().matrix().transpose();
        } else {
            col = ((Xt.middleCols(j, len).colwise() - Xt.col(j)).colwise().squaredNorm().array() * scale)
                      .exp()
                      .matrix()
                      .transpose();
        }
        col[0] = 1.0f;
        rowsum[j] += col.cast<double>().sum();
        rowsum.segment(j + 1, len - 1) += col.tail(len - 1).cast<double>();
    }
}

}  // namespace

HSICResult hsic_pvalue_projected(const Mat& X, const Mat& Y, const Mat& F, int permutations,
                                 std::uint64_t seed, const PermutationScheme& scheme) {
    check_pair(X, Y);
    const Eigen::Index n = X.rows();
    if (F.rows() != n) throw DimensionError("projection features must have one row per sample");
    if (permutations < 50) throw PreconditionError("permutation test needs B >= 50");
    if (n < 20) throw PreconditionError("permutation test needs n >= 20");

    Eigen::Index block_len = 0;
    if (scheme.kind == PermutationScheme::Kind::Blocks) {
        if (scheme.block_count < 2 || n % scheme.block_count != 0)
            throw PreconditionError("block permutation needs n divisible into >= 2 equal blocks");
        block_len = n / scheme.block_count;
    }

    // F'F is unchanged by any row permutation
    const Eigen::LDLT<Mat> ftf(F.transpose() * F);
    if (ftf.info() != Eigen::Success || !(ftf.vectorD().minCoeff() > 1e-12 * ftf.vectorD().maxCoeff()))
        throw SingularMatrixError("projection features are rank deficient");

    std::vector<Eigen::Index> perm(static_cast<std::size_t>(n));
    std::vector<Eigen::Index> blocks(static_cast<std::size_t>(scheme.block_count));
    std::iota(perm.begin(), perm.end(), Eigen::Index{0});
    std::iota(blocks.begin(), blocks.end(), Eigen::Index{0});
    auto expand_blocks = [&]() {
        for (Eigen::Index b = 0; b < scheme.block_count; ++b)
            for (Eigen::Index t = 0; t < block_len; ++t)
                perm[static_cast<std::size_t>(b * block_len + t)] = blocks[static_cast<std::size_t>(b)] * block_len + t;
    };
    auto project = [&]() {
        const Mat Fp = F(perm, Eigen::all);
        return Mat(X - Fp * ftf.solve(Fp.transpose() * X));
    };

    HSICResult r;
    r.method = PValueMethod::Permutation;
    r.n = n;
    r.permutations = permutations;
    const Mat X0 = project();
    r.bw_x = median_bandwidth(X0, seed);
    r.bw_y = median_bandwidth(Y, seed);

    const Mat Ld = gram(Y, {r.bw_y});
    {
        Mat K = gram(X0, {r.bw_x});
        center_in_place(K);
        r.statistic = full_trace(K, Ld) / (static_cast<double>(n) * static_cast<double>(n));
    }
    const MatF L = Ld.cast<float>();
    const Eigen::VectorXd lrow = Ld.rowwise().sum();
    const double lsum = lrow.sum();

    MatF K(n, n);
    Eigen::VectorXd krow;
    // sum_ij (HKH)_ij L_p(i)p(j) with the centering expanded
    auto stat = [&](const Mat& Xb) {
        lower_gram(Xb, r.bw_x, K, krow);
        const double raw = block_len == 0 ? permuted_trace(K, L, perm) : block_permuted_trace(K, L, blocks, block_len);
        const double dn = static_cast<double>(n);
        double cross = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) cross += krow[i] * lrow[perm[static_cast<std::size_t>(i)]];
        return raw - 2.0 * cross / dn + krow.sum() * lsum / (dn * dn);
    };
    const double observed = stat(X0);

    Rng rng(derive_seed({seed, "hsic-permutation"}, 0));
    int exceed = 0;
    for (int b = 0; b < permutations; ++b) {
        if (block_len == 0) {
            std::iota(perm.begin(), perm.end(), Eigen::Index{0});
            seeded_shuffle(perm, rng);
        } else {
            std::iota(blocks.begin(), blocks.end(), Eigen::Index{0});
            seeded_shuffle(blocks, rng);
            expand_blocks();
        }
        if (stat(project()) >= observed) ++exceed;
    }
    r.p_value = (1.0 + exceed) / (1.0 + permutations);
    return r;
}

HSICResult hsic_pvalue_gamma(const Mat& X, const Mat& Y, std::uint64_t fallback_seed) {
    check_pair(X, Y);
    const Eigen::Index n = X.rows();
    if (n < 100) throw PreconditionError("gamma approximation needs n >= 100");

    HSICResult r;
    r.method = PValueMethod::Gamma;
    r.n = n;
    r.bw_x = median_bandwidth(X, fallback_seed);
    r.bw_y = median_bandwidth(Y, fallback_seed);
    Mat K = gram(X, {r.bw_x});
    Mat L = gram(Y, {r.bw_y});
    const double dn = static_cast<double>(n);
    const double mu_x = (K.sum() - dn) / (dn * (dn - 1.0));
    const double mu_y = (L.sum() - dn) / (dn * (dn - 1.0));
    center_in_place(K);
    center_in_place(L);

    // Null moments of n * HSIC_b under independence.
    double cross = 0.0, off = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
        const double* kc = K.col(j).data();
        const double* lc = L.col(j).data();
        double c = 0.0, o = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
            const double p = kc[i] * lc[i];
            c += p;
            o += p * p;
        }
        cross += c;
        off += o - kc[j] * lc[j] * kc[j] * lc[j];
    }
    r.statistic = cross / (dn * dn);
    double var = off / 36.0 / (dn * (dn - 1.0));
    var *= 72.0 * (dn - 4.0) * (dn - 5.0) / (dn * (dn - 1.0) * (dn - 2.0) * (dn - 3.0));
    const double mean = (1.0 + mu_x * mu_y - mu_x - mu_y) / dn;

    if (!(mean > 0.0) || !(var > 0.0)) {
        return hsic_pvalue_permutation(X, Y, 200, fallback_seed);
    }
    const double shape = mean * mean / var;
    const double scale = var * dn / mean;
    r.p_value = boost::math::gamma_q(shape, dn * r.statistic / scale);
    r.p_value = std::clamp(r.p_value, 0.0, 1.0);
    return r;
}

IndependenceDecision test_independence(const Mat& X, const Mat& Y,
                                       const IndependenceOptions& opts, std::uint64_t seed,
                                       const Mat* projection) {
    check_pair(X, Y);
    if (projection && projection->rows() != X.rows())
        throw DimensionError("projection features must have one row per sample");
    const Mat* xs = &X;
    const Mat* ys = &Y;
    const Mat* fs = projection;
    Mat xsub, ysub, fsub;
    PermutationScheme scheme = opts.scheme;
    if (opts.sample_cap > 0 && X.rows() > opts.sample_cap) {
        Rng rng(derive_seed({seed, "hsic-subsample"}, 0));
        std::vector<Eigen::Index> rows;
        if (scheme.kind == PermutationScheme::Kind::Blocks && scheme.block_count > 0 &&
            X.rows() % scheme.block_count == 0) {
            // keep the same time offsets in every block so blocks stay aligned
            const Eigen::Index m = X.rows() / scheme.block_count;
            const Eigen::Index keep = std::max<Eigen::Index>(1, opts.sample_cap / scheme.block_count);
            std::vector<Eigen::Index> offsets(static_cast<std::size_t>(m));
            std::iota(offsets.begin(), offsets.end(), Eigen::Index{0});
            seeded_shuffle(offsets, rng);
            offsets.resize(static_cast<std::size_t>(std::min(keep, m)));
            std::sort(offsets.begin(), offsets.end());
            for (Eigen::Index b = 0; b < scheme.block_count; ++b)
                for (Eigen::Index t : offsets) rows.push_back(b * m + t);
        } else {
            rows.resize(static_cast<std::size_t>(X.rows()));
            std::iota(rows.begin(), rows.end(), Eigen::Index{0});
            seeded_shuffle(rows, rng);
            rows.resize(static_cast<std::size_t>(opts.sample_cap));
            std::sort(rows.begin(), rows.end());
            scheme = {};
        }
        xsub = X(rows, Eigen::all);
        ysub = Y(rows, Eigen::all);
        xs = &xsub;
        ys = &ysub;
        if (projection) {
            fsub = (*projection)(rows, Eigen::all);
            fs = &fsub;
        }
    }

    IndependenceDecision out;
    if (opts.method == PValueMethod::Gamma) {
        out.result = hsic_pvalue_gamma(*xs, *ys, seed);
    } else if (fs) {
        out.result = hsic_pvalue_projected(*xs, *ys, *fs, opts.permutations, seed, scheme);
    } else {
        out.result = hsic_pvalue_permutation(*xs, *ys, opts.permutations, seed, scheme);
    }
    out.reject = out.result.p_value < opts.alpha;
    return out;
}

}  // namespace c2l
