#include "c2l/core.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace c2l {

namespace {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

bool vectors_equal(const std::vector<Vec>& a, const std::vector<Vec>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].size() != b[i].size()) return false;
        if (a[i] != b[i]) return false;
    }
    return true;
}

void check_finite(const Vec& v, const char* what) {
    if (!v.allFinite()) throw DimensionError(std::string("non-finite entry in ") + what);
}

}  // namespace

std::uint64_t derive_seed(const SeedSpec& spec, std::uint64_t index) {
    std::uint64_t x = splitmix64(spec.master_seed ^ splitmix64(fnv1a64(spec.stream_label)));
    return splitmix64(x ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

// ---------------------------------------------------------------------------

Distribution parse_distribution(std::string_view name) {
    if (name == "gaussian") return Distribution::Gaussian;
    if (name == "uniform") return Distribution::Uniform;
    if (name == "gamma") return Distribution::Gamma;
    if (name == "exponential") return Distribution::Exponential;
    if (name == "lognormal") return Distribution::Lognormal;
    if (name == "beta") return Distribution::Beta;
    if (name == "laplace") return Distribution::Laplace;
    throw ConfigError("unknown distribution id '" + std::string(name) + "'");
}

std::string_view to_string(Distribution d) {
    switch (d) {
        case Distribution::Gaussian: return "gaussian";
        case Distribution::Uniform: return "uniform";
        case Distribution::Gamma: return "gamma";
        case Distribution::Exponential: return "exponential";
        case Distribution::Lognormal: return "lognormal";
        case Distribution::Beta: return "beta";
        case Distribution::Laplace: return "laplace";
    }
    return "unknown";
}

const std::vector<Distribution>& all_distributions() {
    static const std::vector<Distribution> all{
        Distribution::Gaussian, Distribution::Uniform,   Distribution::Gamma,
        Distribution::Exponential, Distribution::Lognormal, Distribution::Beta,
        Distribution::Laplace};
    return all;
}

double analytic_skewness(Distribution d) {
    switch (d) {
        case Distribution::Gaussian:
        case Distribution::Uniform:
        case Distribution::Laplace:
            return 0.0;
        case Distribution::Gamma:
            return 2.0 / std::sqrt(2.0);
        case Distribution::Exponential:
            return 2.0;
        case Distribution::Lognormal: {
            const double e = std::exp(0.25);
            return (e + 2.0) * std::sqrt(e - 1.0);
        }
        case Distribution::Beta: {
            const double a = 2.0, b = 5.0;
            return 2.0 * (b - a) * std::sqrt(a + b + 1.0) / ((a + b + 2.0) * std::sqrt(a * b));
        }
    }
    return 0.0;
}

StandardizedSampler::StandardizedSampler(Distribution dist, std::uint64_t seed)
    : dist_(dist), rng_(seed) {}

double StandardizedSampler::next() {
    switch (dist_) {
        case Distribution::Gaussian:
            return normal_(rng_);
        case Distribution::Uniform:
            return (uniform_(rng_) - 0.5) * std::sqrt(12.0);
        case Distribution::Gamma:
            // shape 2, scale 1: mean 2, variance 2
            return (gamma2_(rng_) - 2.0) / std::sqrt(2.0);
        case Distribution::Exponential:
            return exponential_(rng_) - 1.0;
        case Distribution::Lognormal: {
            const double s2 = 0.25;
            const double mean = std::exp(s2 / 2.0);
            const double sd = std::sqrt((std::exp(s2) - 1.0) * std::exp(s2));
            return (lognormal_(rng_) - mean) / sd;
        }
        case Distribution::Beta: {
            const double x = gamma2_(rng_);
            const double y = gamma5_(rng_);
            const double mean = 2.0 / 7.0;
            const double sd = std::sqrt(10.0 / (49.0 * 8.0));
            return (x / (x + y) - mean) / sd;
        }
        case Distribution::Laplace: {
            // inverse CDF; variance of laplace(0, 1) is 2
            double u = uniform_(rng_) - 0.5;
            while (u == -0.5) u = uniform_(rng_) - 0.5;
            const double x = -std::copysign(1.0, u) * std::log1p(-2.0 * std::abs(u));
            return x / std::numbers::sqrt2;
        }
    }
    return 0.0;
}

Vec StandardizedSampler::draw(Eigen::Index dim) {
    Vec v(dim);
    for (Eigen::Index i = 0; i < dim; ++i) v[i] = next();
    return v;
}

// ---------------------------------------------------------------------------

void Trajectory::validate() const {
    if (actions.empty()) throw DimensionError("trajectory has no actions");
    if (states.size() != actions.size() + 1)
        throw DimensionError("trajectory needs T+1 states for T actions");
    const auto ds = states.front().size();
    const auto da = actions.front().size();
    for (const auto& s : states) {
        if (s.size() != ds) throw DimensionError("inconsistent state dimension");
        check_finite(s, "state");
    }
    for (const auto& a : actions) {
        if (a.size() != da) throw DimensionError("inconsistent action dimension");
        check_finite(a, "action");
    }
    if (latents) {
        if (latents->size() != actions.size())
            throw DimensionError("latents length must equal actions length");
        for (const auto& u : *latents) check_finite(u, "latent");
    }
    if (rewards && rewards->size() != actions.size())
        throw DimensionError("rewards length must equal actions length");
}

bool Trajectory::operator==(const Trajectory& other) const {
    if (!vectors_equal(states, other.states) || !vectors_equal(actions, other.actions))
        return false;
    if (latents.has_value() != other.latents.has_value()) return false;
    if (latents && !vectors_equal(*latents, *other.latents)) return false;
    return rewards == other.rewards;
}

Eigen::Index DemoSet::state_dim() const {
    return trajectories.empty() ? 0 : trajectories.front().state_dim();
}

Eigen::Index DemoSet::action_dim() const {
    return trajectories.empty() ? 0 : trajectories.front().action_dim();
}

std::size_t DemoSet::total_steps() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.horizon();
    return n;
}

void DemoSet::validate() const {
    if (trajectories.empty()) throw DimensionError("demo set is empty");
    const auto ds = state_dim();
    const auto da = action_dim();
    for (const auto& t : trajectories) {
        t.validate();
        if (t.state_dim() != ds || t.action_dim() != da)
            throw DimensionError("trajectories disagree on state/action dimension");
    }
}

bool DemoSet::operator==(const DemoSet& other) const {
    return trajectories == other.trajectories && meta == other.meta;
}

// ---------------------------------------------------------------------------
// JSON Lines persistence

std::string format_real(double x) {
    std::array<char, 64> buf{};
    auto res = std::to_chars(buf.data(), buf.data() + buf.size(), x,
                             std::chars_format::general, 17);
    return std::string(buf.data(), res.ptr);
}

namespace {

void write_vec(std::ostream& os, const Vec& v) {
    os << '[';
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        os << format_real(v[i]);
    }
    os << ']';
}

void write_vec_list(std::ostream& os, const std::vector<Vec>& vs) {
    os << '[';
    for (std::size_t i = 0; i < vs.size(); ++i) {
        if (i) os << ',';
        write_vec(os, vs[i]);
    }
    os << ']';
}

std::vector<Vec> read_vec_list(const Json& j, const char* field, Eigen::Index width) {
    if (!j.is_array()) throw SchemaError(std::string("field '") + field + "' must be an array");
    std::vector<Vec> out;
    out.reserve(j.size());
    for (const auto& row : j) {
        if (!row.is_array()) throw SchemaError(std::string("rows of '") + field + "' must be arrays");
        if (static_cast<Eigen::Index>(row.size()) != width)
            throw DimensionError(std::string("row of '") + field + "' has width " +
                                 std::to_string(row.size()) + ", expected " + std::to_string(width));
        Vec v(width);
        for (Eigen::Index i = 0; i < width; ++i) {
            if (!row[i].is_number()) throw SchemaError(std::string("non-numeric entry in '") + field + "'");
            v[i] = row[i].get<double>();
        }
        out.push_back(std::move(v));
    }
    return out;
}

}  // namespace

void save_demoset(const DemoSet& d, const std::filesystem::path& path) {
    d.validate();
    Json meta = d.meta;
    meta["version"] = kDemoSetVersion;
    meta["d_s"] = d.state_dim();
    meta["d_a"] = d.action_dim();

    std::ostringstream os;
    os << meta.dump() << '\n';
    for (const auto& t : d.trajectories) {
        os << "{\"states\":";
        write_vec_list(os, t.states);
        os << ",\"actions\":";
        write_vec_list(os, t.actions);
        if (t.latents) {
            os << ",\"latents\":";
            write_vec_list(os, *t.latents);
        }
        if (t.rewards) {
            os << ",\"rewards\":[";
            for (std::size_t i = 0; i < t.rewards->size(); ++i) {
                if (i) os << ',';
                os << format_real((*t.rewards)[i]);
            }
            os << ']';
        }
        os << "}\n";
    }

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    const std::string text = os.str();
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

DemoSet load_demoset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "' for reading");

    std::string line;
    if (!std::getline(in, line)) throw SchemaError("missing metadata line");
    DemoSet d;
    try {
        d.meta = Json::parse(line);
    } catch (const Json::parse_error& e) {
        throw SchemaError(std::string("metadata is not valid JSON: ") + e.what());
    }
    if (!d.meta.is_object()) throw SchemaError("metadata must be an object");
    if (!d.meta.contains("version") || !d.meta["version"].is_number_integer())
        throw SchemaError("metadata lacks an integer 'version'");
    if (d.meta["version"].get<int>() != kDemoSetVersion)
        throw SchemaError("unsupported demo set version " + d.meta["version"].dump());
    for (const char* key : {"d_s", "d_a"}) {
        if (!d.meta.contains(key) || !d.meta[key].is_number_integer())
            throw SchemaError(std::string("metadata lacks integer '") + key + "'");
    }
    const Eigen::Index ds = d.meta["d_s"].get<Eigen::Index>();
    const Eigen::Index da = d.meta["d_a"].get<Eigen::Index>();

    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const Json::parse_error& e) {
            throw SchemaError("line " + std::to_string(lineno) + " is not valid JSON");
        }
        if (!j.is_object()) throw SchemaError("line " + std::to_string(lineno) + " is not an object");
        for (const char* key : {"states", "actions"}) {
            if (!j.contains(key))
                throw SchemaError("line " + std::to_string(lineno) + " is missing '" + key + "'");
        }
        Trajectory t;
        t.states = read_vec_list(j["states"], "states", ds);
        t.actions = read_vec_list(j["actions"], "actions", da);
        if (j.contains("latents")) {
            const auto& lj = j["latents"];
            const Eigen::Index du = (lj.is_array() && !lj.empty() && lj[0].is_array())
                                        ? static_cast<Eigen::Index>(lj[0].size())
                                        : da;
            t.latents = read_vec_list(lj, "latents", du);
        }
        if (j.contains("rewards")) {
            if (!j["rewards"].is_array()) throw SchemaError("'rewards' must be an array");
            std::vector<double> r;
            for (const auto& x : j["rewards"]) {
                if (!x.is_number()) throw SchemaError("non-numeric reward");
                r.push_back(x.get<double>());
            }
            t.rewards = std::move(r);
        }
        t.validate();
        d.trajectories.push_back(std::move(t));
    }
    d.validate();
    return d;
}

// ---------------------------------------------------------------------------

Mat stack_rows(const std::vector<Vec>& rows) {
    if (rows.empty()) return Mat(0, 0);
    Mat m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
    for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    return m;
}

LaggedTripleSet extract_lagged_triples(const DemoSet& d, int lag) {
    if (lag < 1) throw PreconditionError("lag must be >= 1");
    Eigen::Index n = 0;
    for (const auto& t : d.trajectories)
        n += std::max<Eigen::Index>(0, static_cast<Eigen::Index>(t.horizon()) - lag);
    if (n == 0)
        throw EmptyResultError("no trajectory is longer than lag " + std::to_string(lag));

    LaggedTripleSet out;
    out.lag = lag;
    out.z.resize(n, d.state_dim());
    out.s.resize(n, d.state_dim());
    out.a.resize(n, d.action_dim());
    out.index.reserve(static_cast<std::size_t>(n));
    Eigen::Index row = 0;
    for (std::size_t ti = 0; ti < d.trajectories.size(); ++ti) {
        const auto& t = d.trajectories[ti];
        const int T = static_cast<int>(t.horizon());
        for (int step = lag; step < T; ++step, ++row) {
            out.z.row(row) = t.states[static_cast<std::size_t>(step - lag)].transpose();
            out.s.row(row) = t.states[static_cast<std::size_t>(step)].transpose();
            out.a.row(row) = t.actions[static_cast<std::size_t>(step)].transpose();
            out.index.emplace_back(static_cast<int>(ti), step);
        }
    }
    return out;
}

LaggedTripleSet select_rows(const LaggedTripleSet& t, const std::vector<Eigen::Index>& rows) {
    LaggedTripleSet out;
    out.lag = t.lag;
    const auto n = static_cast<Eigen::Index>(rows.size());
    out.z.resize(n, t.z.cols());
    out.s.resize(n, t.s.cols());
    out.a.resize(n, t.a.cols());
    out.index.reserve(rows.size());
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto r = rows[static_cast<std::size_t>(i)];
        out.z.row(i) = t.z.row(r);
        out.s.row(i) = t.s.row(r);
        out.a.row(i) = t.a.row(r);
        if (!t.index.empty()) out.index.push_back(t.index[static_cast<std::size_t>(r)]);
    }
    return out;
}

}  // namespace c2l
