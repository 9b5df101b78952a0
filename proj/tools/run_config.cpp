#include "run_config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace c2l::cli {

namespace {

// Reads one JSON object, tracking which keys were consumed.
class Fields {
public:
    Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + "expected an object");
    }

    std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const Json* find(const std::string& key) {
        const auto it = j_.find(key);
        if (it == j_.end()) return nullptr;
        seen_.insert(key);
        return &*it;
    }

    template <class T>
    void get(const std::string& key, T& out) {
        const Json* v = find(key);
        if (v) out = convert<T>(*v, field(key));
    }

    void dist(const std::string& key, Distribution& out) {
        const Json* v = find(key);
        if (!v) return;
        const auto name = convert<std::string>(*v, field(key));
        try {
            out = parse_distribution(name);
        } catch (const ConfigError&) {
            throw ConfigError(field(key) + ": unknown distribution '" + name + "'");
        }
    }

    void dists(const std::string& key, std::vector<Distribution>& out) {
        const Json* v = find(key);
        if (!v) return;
        const auto names = convert<std::vector<std::string>>(*v, field(key));
        out.clear();
        for (const auto& n : names) {
            try {
                out.push_back(parse_distribution(n));
            } catch (const ConfigError&) {
                throw ConfigError(field(key) + ": unknown distribution '" + n + "'");
            }
        }
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw ConfigError(field(it.key()) + ": unknown field");
    }

    template <class T>
    static T convert(const Json& v, const std::string& name) {
        bool ok = true;
        if constexpr (std::is_same_v<T, bool>) {
            ok = v.is_boolean();
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
            ok = v.is_number_unsigned();
        } else if constexpr (std::is_integral_v<T>) {
            ok = v.is_number_integer();
        } else if constexpr (std::is_floating_point_v<T>) {
            ok = v.is_number();
        } else if constexpr (std::is_same_v<T, std::string>) {
            ok = v.is_string();
        }
        if (!ok) throw ConfigError(name + ": wrong type");
        try {
            return v.get<T>();
        } catch (const Json::exception&) {
            throw ConfigError(name + ": wrong type");
        }
    }

private:
    std::string where() const { return path_.empty() ? "" : path_ + ": "; }

    const Json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class T>
T parse_enum(const std::string& field, const std::string& name, T (*parse)(std::string_view)) {
    try {
        return parse(name);
    } catch (const ConfigError& e) {
        throw ConfigError(field + ": " + e.what());
    }
}

ParamPolicy::Kind parse_policy_kind(std::string_view n) {
    if (n == "linear") return ParamPolicy::Kind::Linear;
    if (n == "mlp") return ParamPolicy::Kind::Mlp;
    throw ConfigError("unknown policy class '" + std::string(n) + "'");
}

FeatureMap::Kind parse_feature_kind(std::string_view n) {
    if (n == "identity_bias") return FeatureMap::Kind::IdentityBias;
    if (n == "random_fourier") return FeatureMap::Kind::RandomFourier;
    throw ConfigError("unknown feature map '" + std::string(n) + "'");
}

EnvSpec parse_env(const Json& j, const std::string& path) {
    Fields f(j, path);
    std::string kind = "linear";
    f.get("kind", kind);
    const EnvKind k = parse_enum(f.field("kind"), kind, parse_env_kind);
    Json merged = (k == EnvKind::Linear ? default_linear_env(0) : default_pendulum_env()).to_json();
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (it.key() == "kind") continue;
        const auto base = merged.find(it.key());
        if (base == merged.end()) throw ConfigError(f.field(it.key()) + ": unknown field");
        f.find(it.key());
        const bool same = (base->is_number() && it->is_number()) || (base->is_string() && it->is_string()) ||
                          (base->is_array() && it->is_array());
        if (!same) throw ConfigError(f.field(it.key()) + ": wrong type");
        *base = *it;
    }
    Distribution d = Distribution::Laplace;
    f.dist("noise_dist", d);
    f.finish();
    try {
        return EnvSpec::from_json(merged);
    } catch (const Error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void parse_ivfind(const Json& j, IVFindConfig& c) {
    Fields f(j, "ivfind");
    f.get("w", c.w);
    f.get("alpha", c.alpha);
    std::string method(to_string(c.test.method));
    f.get("method", method);
    c.test.method = parse_enum(f.field("method"), method, parse_pvalue_method);
    f.get("permutations", c.test.permutations);
    f.get("sample_cap", c.test.sample_cap);
    std::string inst = c.residual.instrument == ResidualConfig::Instrument::Identity ? "identity_bias" : "random_fourier";
    f.get("instrument_features", inst);
    c.residual.instrument = parse_enum(f.field("instrument_features"), inst, parse_feature_kind) ==
                                    FeatureMap::Kind::IdentityBias
                                ? ResidualConfig::Instrument::Identity
                                : ResidualConfig::Instrument::RandomFourier;
    f.get("rff_features", c.residual.rff_features);
    f.get("residual_lambda", c.residual.lambda);
    f.get("min_singular", c.min_singular);
    f.get("min_f", c.min_f);
    f.get("exhaustive", c.exhaustive);
    f.get("trajectory_blocks", c.trajectory_blocks);
    f.get("project_instrument", c.project_instrument);
    f.finish();
}

Json ivfind_json(const IVFindConfig& c) {
    Json j = c.to_json();
    j["rff_features"] = c.residual.rff_features;
    j["residual_lambda"] = c.residual.lambda;
    return j;
}

void parse_learner(const Json& j, LearnerConfig& c) {
    Fields f(j, "learner");
    std::string pk(to_string(c.pi_kind)), fk(to_string(c.f_features));
    f.get("pi_kind", pk);
    c.pi_kind = parse_enum(f.field("pi_kind"), pk, parse_policy_kind);
    f.get("mlp_hidden", c.mlp_hidden);
    f.get("f_features", fk);
    c.f_features = parse_enum(f.field("f_features"), fk, parse_feature_kind);
    f.get("rff_features", c.rff_features);
    f.get("eta", c.eta);
    f.get("eta_f", c.eta_f);
    f.get("max_iter", c.max_iter);
    f.get("tol", c.tol);
    f.get("window", c.window);
    f.get("grad_tol", c.grad_tol);
    f.get("warm_start_bc", c.warm_start_bc);
    f.get("mirror_map", c.mirror_map);
    f.get("rollouts", c.rollouts);
    f.get("lambda", c.lambda);
    if (const Json* gd = f.find("gd")) {
        Fields g(*gd, "learner.gd");
        g.get("step", c.gd.step);
        g.get("max_iter", c.gd.max_iter);
        g.get("tol", c.gd.tol);
        g.finish();
    }
    f.get("seed", c.seed);
    f.finish();
}

}  // namespace

ExpertSpec RunConfig::expert() const {
    ExpertSpec x = default_expert(env);
    x.sigma_a = sigma_a;
    x.dist = expert_dist;
    return x;
}

SweepConfig RunConfig::sweep() const {
    SweepConfig s = SweepConfig::defaults(experiment);
    s.env = env;
    s.sigma_a = sigma_a;
    s.sigma_u = confounder.sigma_u;
    s.geometric_weights = geometric_weights;
    s.n_traj = sweep_n_traj;
    s.taus = sweep_taus;
    s.dists = sweep_dists;
    s.seeds = sweep_seeds;
    s.seed = seed;
    s.ivfind = ivfind;
    s.learner = learner;
    s.episodes = episodes;
    s.probes = probes;
    s.workers = workers;
    s.record_timing = record_timing;
    return s;
}

void RunConfig::validate() const {
    env.validate();
    confounder.validate();
    if (sigma_a < 0.0) throw ConfigError("expert.sigma_a: must be >= 0");
    if (n_traj < 1) throw ConfigError("data.n_traj: must be >= 1");
    if (ivfind.w < 1) throw ConfigError("ivfind.w: must be >= 1");
    if (!(ivfind.alpha > 0.0 && ivfind.alpha < 1.0)) throw ConfigError("ivfind.alpha: must lie in (0, 1)");
    if (ivfind.test.permutations < 1) throw ConfigError("ivfind.permutations: must be >= 1");
    if (learner.eta < 0.0) throw ConfigError("learner.eta: must be >= 0");
    if (learner.max_iter < 0) throw ConfigError("learner.max_iter: must be >= 0");
    if (learner.window < 1) throw ConfigError("learner.window: must be >= 1");
    if (learner.rollouts < 1) throw ConfigError("learner.rollouts: must be >= 1");
    if (episodes < 1) throw ConfigError("eval.episodes: must be >= 1");
    if (probes < 1) throw ConfigError("eval.probes: must be >= 1");
    if (workers < 1) throw ConfigError("workers: must be >= 1");
    if (sweep_n_traj.empty() || sweep_taus.empty() || sweep_dists.empty())
        throw ConfigError("sweep: axes must be nonempty");
    if (sweep_seeds < 1) throw ConfigError("sweep.seeds: must be >= 1");
}

Json RunConfig::to_json() const {
    Json d = Json::array();
    for (auto x : sweep_dists) d.push_back(to_string(x));
    return Json{{"seed", seed},
                {"env", env.to_json()},
                {"expert", {{"sigma_a", sigma_a}, {"dist", to_string(expert_dist)}}},
                {"confounder", confounder.to_json()},
                {"data", {{"n_traj", n_traj}}},
                {"ivfind", ivfind_json(ivfind)},
                {"learner", learner.to_json()},
                {"eval", {{"episodes", episodes}, {"probes", probes}}},
                {"sweep",
                 {{"experiment", to_string(experiment)},
                  {"n_traj", sweep_n_traj},
                  {"tau", sweep_taus},
                  {"distributions", d},
                  {"seeds", sweep_seeds},
                  {"geometric_weights", geometric_weights},
                  {"record_timing", record_timing}}},
                {"workers", workers},
                {"out_dir", out_dir}};
}

RunConfig parse_run_config(const Json& j) {
    RunConfig c;
    Fields top(j, "");
    top.get("seed", c.seed);
    if (const Json* e = top.find("env")) c.env = parse_env(*e, "env");
    c.expert_dist = c.env.noise_dist;
    if (const Json* e = top.find("expert")) {
        Fields f(*e, "expert");
        f.get("sigma_a", c.sigma_a);
        f.dist("dist", c.expert_dist);
        f.finish();
    }
    c.confounder.dist = c.env.noise_dist;
    if (const Json* e = top.find("confounder")) {
        Fields f(*e, "confounder");
        f.get("tau", c.confounder.tau);
        f.dist("distribution", c.confounder.dist);
        f.get("sigma_u", c.confounder.sigma_u);
        if (c.confounder.tau < 0) throw ConfigError("confounder.tau: must be >= 0");
        c.confounder.weights = ConfounderSpec::equal_weights(c.confounder.tau);
        f.get("weights", c.confounder.weights);
        if (static_cast<int>(c.confounder.weights.size()) != c.confounder.tau + 1)
            throw ConfigError("confounder.weights: must have tau + 1 entries");
        f.finish();
    }
    if (const Json* e = top.find("data")) {
        Fields f(*e, "data");
        f.get("n_traj", c.n_traj);
        f.finish();
    }
    if (const Json* e = top.find("ivfind")) parse_ivfind(*e, c.ivfind);
    if (const Json* e = top.find("learner")) parse_learner(*e, c.learner);
    if (const Json* e = top.find("eval")) {
        Fields f(*e, "eval");
        f.get("episodes", c.episodes);
        f.get("probes", c.probes);
        f.finish();
    }
    if (const Json* e = top.find("sweep")) {
        Fields f(*e, "sweep");
        std::string exp(to_string(c.experiment));
        f.get("experiment", exp);
        c.experiment = parse_enum(f.field("experiment"), exp, parse_experiment);
        const SweepConfig d = SweepConfig::defaults(c.experiment);
        c.sweep_taus = d.taus;
        c.sweep_dists = d.dists;
        if (c.experiment == Experiment::T1 && !(j.contains("ivfind") && j["ivfind"].contains("w")))
            c.ivfind.w = d.ivfind.w;
        f.get("n_traj", c.sweep_n_traj);
        f.get("tau", c.sweep_taus);
        f.dists("distributions", c.sweep_dists);
        f.get("seeds", c.sweep_seeds);
        f.get("geometric_weights", c.geometric_weights);
        f.get("record_timing", c.record_timing);
        f.finish();
    }
    top.get("workers", c.workers);
    top.get("out_dir", c.out_dir);
    top.finish();
    c.validate();
    return c;
}

Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    try {
        return Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void write_json_file(const Json& j, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_json_file(path)); }

EnvSpec load_env(const std::filesystem::path& path, RunConfig* full) {
    const Json j = read_json_file(path);
    bool run_config = false;
    for (const char* key : {"seed", "env", "expert", "confounder", "data", "ivfind", "learner", "eval", "sweep",
                            "workers", "out_dir"})
        run_config = run_config || (j.is_object() && j.contains(key));
    if (run_config) {
        RunConfig c = parse_run_config(j);
        if (full) *full = c;
        return c.env;
    }
    EnvSpec e = parse_env(j, "env");
    if (full) {
        full->env = e;
        full->expert_dist = e.noise_dist;
        full->confounder.dist = e.noise_dist;
    }
    return e;
}

std::uint64_t resolve_seed(std::uint64_t config_seed, const std::optional<std::uint64_t>& flag) {
    if (flag) return *flag;
    if (const char* env = std::getenv("C2L_SEED"); env && *env) {
        try {
            std::size_t used = 0;
            const unsigned long long v = std::stoull(env, &used);
            if (used == std::string(env).size()) return v;
        } catch (const std::exception&) {
        }
        throw ConfigError("C2L_SEED: not an unsigned integer");
    }
    return config_seed;
}

}  // namespace c2l::cli
