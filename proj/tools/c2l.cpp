#include "run_config.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

using namespace c2l;
using namespace c2l::cli;

namespace {

enum Exit { kOk = 0, kUnexpected = 1, kUsage = 2, kIo = 3, kNoIv = 4, kDegraded = 5 };

struct Common {
    std::string config;
    std::uint64_t seed = 0;
    CLI::Option* seed_opt = nullptr;

    void add(CLI::App* cmd) {
        cmd->add_option("--config", config, "JSON run config");
        seed_opt = cmd->add_option("--seed", seed, "Master seed (overrides C2L_SEED and the config)");
    }

    RunConfig load() const { return config.empty() ? parse_run_config(Json::object()) : load_run_config(config); }

    std::uint64_t resolve(const RunConfig& c) const {
        return resolve_seed(c.seed, seed_opt->count() ? std::optional<std::uint64_t>(seed) : std::nullopt);
    }
};

std::filesystem::path with_suffix(const std::filesystem::path& p, const std::string& suffix) {
    return std::filesystem::path(p.string() + suffix);
}

void ensure_parent(const std::filesystem::path& p) {
    const auto dir = p.parent_path();
    if (dir.empty()) return;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string());
}

Json policy_file(const ParamPolicy& p, const Json& meta) { return Json{{"policy", p.to_json()}, {"meta", meta}}; }

ParamPolicy load_policy(const std::filesystem::path& path) {
    const Json j = read_json_file(path);
    try {
        return ParamPolicy::from_json(j.is_object() && j.contains("policy") ? j.at("policy") : j);
    } catch (const Json::exception& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------

struct GenArgs {
    Common common;
    std::string out;
};

int cmd_gen(const GenArgs& a) {
    RunConfig c = a.common.load();
    c.seed = a.common.resolve(c);
    const ExpertSpec ex = c.expert();
    const DemoSet d = gen_demoset(c.env, ex, c.confounder, c.n_traj, c.seed);
    ensure_parent(a.out);
    save_demoset(d, a.out);
    write_json_file(c.to_json(), with_suffix(a.out, ".config.json"));
    write_json_file(policy_file(ex.policy, {{"method", "expert"}}), with_suffix(a.out, ".expert.json"));
    std::cout << "wrote " << d.trajectories.size() << " trajectories of length " << c.env.T << " to " << a.out
              << "\n";
    return kOk;
}

struct FindIvArgs {
    Common common;
    std::string data;
    std::string out;
    int w = 0;
    double alpha = 0.0;
    std::string method;
    CLI::Option* w_opt = nullptr;
    CLI::Option* alpha_opt = nullptr;
};

int cmd_find_iv(const FindIvArgs& a) {
    RunConfig c = a.common.load();
    c.seed = a.common.resolve(c);
    if (a.w_opt->count()) c.ivfind.w = a.w;
    if (a.alpha_opt->count()) c.ivfind.alpha = a.alpha;
    if (!a.method.empty()) c.ivfind.test.method = parse_pvalue_method(a.method);
    if (c.ivfind.w < 1) throw ConfigError("--w: must be >= 1");
    if (!(c.ivfind.alpha > 0.0 && c.ivfind.alpha < 1.0)) throw ConfigError("--alpha: must lie in (0, 1)");

    const DemoSet d = load_demoset(a.data);
    const IVSearchResult r = find_valid_iv(d, c.ivfind, c.seed);

    std::printf("%4s  %10s  %12s  %10s  %10s  %s\n", "lag", "p_value", "hsic", "min_sv", "f_ratio", "decision");
    for (const auto& rep : r.reports) {
        std::printf("%4d  %10.4f  %12.6g  %10.4g  %10.4g  %s\n", rep.lag, rep.hsic.p_value, rep.hsic.statistic,
                    rep.min_singular, rep.f_ratio, std::string(to_string(rep.decision)).c_str());
    }
    if (r.selected_lag)
        std::printf("selected lag: %d\n", *r.selected_lag);
    else
        std::printf("selected lag: none\n");

    const std::filesystem::path out = a.out.empty() ? with_suffix(a.data, ".iv.json") : std::filesystem::path(a.out);
    ensure_parent(out);
    write_json_file(r.to_json(), out);
    write_json_file(c.to_json(), with_suffix(out, ".config.json"));
    return r.selected_lag ? kOk : kNoIv;
}

struct TrainArgs {
    Common common;
    std::string data;
    std::string method;
    int lag = 0;
    std::string env;
    std::string out;
};

int cmd_train(const TrainArgs& a) {
    RunConfig c = a.common.load();
    if (!a.env.empty()) load_env(a.env, &c);
    c.seed = a.common.resolve(c);
    if (a.method == "sim" && a.env.empty()) throw ConfigError("--env: required for --method sim");
    if (a.method != "bc" && a.lag < 1) throw ConfigError("--lag: required (>= 1) for --method " + a.method);

    const DemoSet d = load_demoset(a.data);
    LearnerConfig lc = c.learner;
    lc.seed = derive_seed({c.seed, "learner"}, 0);
    Json meta{{"method", a.method}, {"seed", c.seed}, {"warning", nullptr}};
    if (a.method != "bc") meta["lag"] = a.lag;

    ParamPolicy pi;
    ensure_parent(a.out);
    if (a.method == "bc") {
        pi = bc_fit(d, lc);
    } else if (a.method == "sim") {
        if (c.env.d_s != d.state_dim() || c.env.d_a != d.action_dim())
            throw DimensionError("--env: dimensions do not match the data");
        pi = learn_policy_sim(d, a.lag, c.env, lc);
    } else {
        const OfflineResult r = learn_policy_offline(d, a.lag, lc);
        pi = r.policy;
        meta["converged"] = r.converged;
        meta["iterations"] = r.state.iteration;
        if (!r.converged) {
            meta["warning"] = "did not converge within max_iter";
            std::cerr << "warning: offline learner did not converge within " << lc.max_iter << " iterations\n";
        }
        write_trace_csv(r.state.trace, with_suffix(a.out, ".trace.csv"));
    }
    write_json_file(policy_file(pi, meta), a.out);
    write_json_file(c.to_json(), with_suffix(a.out, ".config.json"));
    std::cout << "wrote " << a.method << " policy to " << a.out << "\n";
    return kOk;
}

struct EvalArgs {
    Common common;
    std::string policy;
    std::string env;
    std::string out;
    int episodes = 0;
    int probes = 0;
    CLI::Option* episodes_opt = nullptr;
    CLI::Option* probes_opt = nullptr;
};

int cmd_eval(const EvalArgs& a) {
    RunConfig c = a.common.load();
    load_env(a.env, &c);
    c.seed = a.common.resolve(c);
    if (a.episodes_opt->count()) c.episodes = a.episodes;
    if (a.probes_opt->count()) c.probes = a.probes;
    if (c.episodes < 1) throw ConfigError("--episodes: must be >= 1");
    if (c.probes < 1) throw ConfigError("--probes: must be >= 1");

    const ParamPolicy pi = load_policy(a.policy);
    if (pi.d_in != c.env.d_s || pi.d_out != c.env.d_a)
        throw DimensionError("policy dimensions " + std::to_string(pi.d_in) + "x" + std::to_string(pi.d_out) +
                             " do not match env " + std::to_string(c.env.d_s) + "x" + std::to_string(c.env.d_a));
    const ExpertSpec ex = c.expert();
    const std::uint64_t probe_seed = derive_seed({c.seed, "probes"}, 0);
    const std::uint64_t value_seed = derive_seed({c.seed, "value"}, 0);
    const Mat P = expert_probes(c.env, ex, c.confounder, c.probes, probe_seed);
    const ValueAnchors anchors = value_anchors(c.env, ex, c.episodes, value_seed);
    const PolicyValue v = policy_value(pi, c.env, c.episodes, value_seed, anchors);

    const Json out{{"mse", action_mse(pi, ex.policy, P)},
                   {"j_raw", v.j_raw},
                   {"j_norm", v.j_norm},
                   {"j_exp", anchors.j_exp},
                   {"j_rand", anchors.j_rand},
                   {"episodes", c.episodes},
                   {"probes", c.probes},
                   {"seed", c.seed},
                   {"probe_seed", probe_seed},
                   {"value_seed", value_seed}};
    std::cout << out.dump(2) << "\n";
    if (!a.out.empty()) {
        ensure_parent(a.out);
        write_json_file(out, a.out);
        write_json_file(c.to_json(), with_suffix(a.out, ".config.json"));
    }
    return kOk;
}

struct SweepArgs {
    Common common;
    std::string out_dir;
    int workers = 0;
    CLI::Option* workers_opt = nullptr;
};

int cmd_sweep(const SweepArgs& a) {
    RunConfig c = a.common.load();
    c.seed = a.common.resolve(c);
    if (a.workers_opt->count()) c.workers = a.workers;
    if (!a.out_dir.empty()) c.out_dir = a.out_dir;
    const SweepConfig sc = c.sweep();
    try {
        sc.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(std::string("sweep: ") + e.what());
    }

    const std::filesystem::path dir = c.out_dir;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string());
    write_json_file(c.to_json(), dir / "resolved_config.json");

    const SweepResult r = run_sweep(sc, dir / "raw.csv");
    const auto agg = aggregate(r.rows);
    write_aggregates(agg, dir / "aggregate.csv");
    for (const auto& [name, chart] : sweep_charts(sc.experiment, agg)) {
        std::ofstream svg(dir / name, std::ios::binary);
        svg << svg_line_chart(chart);
        if (!svg) throw IoError("failed writing " + (dir / name).string());
    }
    const double rate = r.success_rate();
    std::cout << "rows: " << r.rows.size() << " (" << r.skipped << " resumed), failures: " << r.failures.size()
              << ", success rate " << rate << "\n";
    if (!r.failures.empty()) std::cout << "failed rows listed in " << (dir / "raw.csv.failures.csv").string() << "\n";
    return rate >= 0.95 ? kOk : kDegraded;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Confounded imitation learning: data, IV search, training, evaluation and sweeps"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* g = app.add_subcommand("gen", "Generate a demonstration dataset");
    gen.common.add(g);
    g->add_option("--out", gen.out, "Output JSONL dataset")->required();

    FindIvArgs fi;
    auto* f = app.add_subcommand("find-iv", "Search for the minimal valid lag");
    fi.common.add(f);
    f->add_option("--data", fi.data, "Dataset JSONL")->required();
    fi.w_opt = f->add_option("--w", fi.w, "Largest candidate lag");
    fi.alpha_opt = f->add_option("--alpha", fi.alpha, "Test level");
    f->add_option("--method", fi.method, "p-value method")->check(CLI::IsMember({"permutation", "gamma"}));
    f->add_option("--out", fi.out, "Report JSON (default <data>.iv.json)");

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Learn a policy");
    tr.common.add(t);
    t->add_option("--data", tr.data, "Dataset JSONL")->required();
    t->add_option("--method", tr.method, "Learner")->required()->check(CLI::IsMember({"bc", "sim", "offline"}));
    t->add_option("--lag", tr.lag, "Instrument lag");
    t->add_option("--env", tr.env, "Simulator env JSON (required for sim)");
    t->add_option("--out", tr.out, "Output policy JSON")->required();

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "Score a policy against the expert");
    ev.common.add(e);
    e->add_option("--policy", ev.policy, "Policy JSON")->required();
    e->add_option("--env", ev.env, "Env JSON or run config")->required();
    ev.episodes_opt = e->add_option("--episodes", ev.episodes, "Rollout episodes");
    ev.probes_opt = e->add_option("--probes", ev.probes, "Probe states for action MSE");
    e->add_option("--out", ev.out, "Metrics JSON");

    SweepArgs sw;
    auto* s = app.add_subcommand("sweep", "Run a T1 or T2 experiment grid");
    sw.common.add(s);
    s->get_option("--config")->required();
    s->add_option("--out-dir", sw.out_dir, "Output directory (default from config)");
    sw.workers_opt = s->add_option("--workers", sw.workers, "Worker threads");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& err) {
        const int rc = app.exit(err);
        return rc == 0 ? kOk : kUsage;
    }

    try {
        if (*g) return cmd_gen(gen);
        if (*f) return cmd_find_iv(fi);
        if (*t) return cmd_train(tr);
        if (*e) return cmd_eval(ev);
        return cmd_sweep(sw);
    } catch (const IoError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kIo;
    } catch (const ConfigError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kUsage;
    } catch (const SchemaError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kUsage;
    } catch (const DimensionError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kUsage;
    } catch (const PreconditionError& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kUsage;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << "\n";
        return kUnexpected;
    }
}
