#include "c2l/evalharness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace c2l {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

Mat expert_probes(const EnvSpec& env, const ExpertSpec& expert, const ConfounderSpec& cs, int count,
                  std::uint64_t seed) {
    if (count < 1) throw PreconditionError("probe count must be >= 1");
    const int per = std::max(1, env.T);
    const int n_traj = (count + per - 1) / per;
    Mat P(count, env.d_s);
    Eigen::Index row = 0;
    for (int i = 0; i < n_traj && row < count; ++i) {
        const Trajectory tr = gen_expert_trajectory(env, expert, cs, derive_seed({seed, "probe"}, i));
        for (std::size_t t = 0; t < tr.horizon() && row < count; ++t) P.row(row++) = tr.states[t].transpose();
    }
    return P;
}

double action_mse(const ParamPolicy& pi, const ParamPolicy& reference, const Mat& probes) {
    if (probes.rows() == 0) throw PreconditionError("empty probe set");
    if (pi.d_in != reference.d_in || pi.d_out != reference.d_out || probes.cols() != pi.d_in)
        throw DimensionError("policy, reference and probe dimensions differ");
    return (pi.predict_rows(probes) - reference.predict_rows(probes)).squaredNorm() /
           static_cast<double>(probes.rows());
}

double action_mse(const ParamPolicy& pi, const Mat& probes, const Mat& actions) {
    if (probes.rows() == 0) throw PreconditionError("empty probe set");
    if (probes.cols() != pi.d_in || actions.cols() != pi.d_out || actions.rows() != probes.rows())
        throw DimensionError("policy, probe and action dimensions differ");
    return (pi.predict_rows(probes) - actions).squaredNorm() / static_cast<double>(probes.rows());
}

ValueAnchors value_anchors(const EnvSpec& env, const ExpertSpec& expert, int episodes, std::uint64_t seed) {
    ValueAnchors a;
    a.j_exp = rollout_policy(env, expert.policy, episodes, seed).mean;
    a.j_rand = rollout_random(env, episodes, seed).mean;
    return a;
}

PolicyValue policy_value(const ParamPolicy& pi, const EnvSpec& env, int episodes, std::uint64_t seed,
                         const ValueAnchors& anchors) {
    const double span = anchors.j_exp - anchors.j_rand;
    if (!(std::abs(span) >= 1e-9)) throw DegenerateDataError("expert and random returns coincide");
    PolicyValue v;
    v.j_raw = rollout_policy(env, pi, episodes, seed).mean;
    v.j_norm = (v.j_raw - anchors.j_rand) / span;
    return v;
}

PolicyValue policy_value(const ParamPolicy& pi, const EnvSpec& env, const ExpertSpec& expert, int episodes,
                         std::uint64_t seed) {
    return policy_value(pi, env, episodes, seed, value_anchors(env, expert, episodes, seed));
}

// ---------------------------------------------------------------------------
// Rows
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

std::string opt_real(const std::optional<double>& x) { return x ? format_real(*x) : std::string(); }

std::optional<double> parse_opt_real(const std::string& s) {
    if (s.empty()) return std::nullopt;
    return std::stod(s);
}

void check_field(const std::string& s, const char* what) {
    if (s.find_first_of(",\n\r\"") != std::string::npos)
        throw ConfigError(std::string(what) + " must not contain commas, quotes or newlines");
}

}  // namespace

std::string MetricRow::key() const {
    std::ostringstream os;
    os << experiment << ',' << env << ',' << method << ',' << n_traj << ',' << tau << ',' << dist << ',' << seed;
    return os.str();
}

std::string MetricRow::to_csv() const {
    check_field(experiment, "experiment");
    check_field(env, "env");
    check_field(method, "method");
    check_field(dist, "dist");
    std::ostringstream os;
    os << key() << ',' << opt_real(mse) << ',' << opt_real(j_raw) << ',' << opt_real(j_norm) << ','
       << (selected_lag ? std::to_string(*selected_lag) : std::string()) << ','
       << (iv_correct ? (*iv_correct ? "1" : "0") : "") << ',' << opt_real(wall_ms);
    return os.str();
}

MetricRow MetricRow::from_csv(const std::string& line) {
    const auto f = split_csv(line);
    if (f.size() != 13) throw SchemaError("metric row must have 13 fields: " + line);
    try {
        MetricRow r;
        r.experiment = f[0];
        r.env = f[1];
        r.method = f[2];
        r.n_traj = std::stoi(f[3]);
        r.tau = std::stoi(f[4]);
        r.dist = f[5];
        r.seed = std::stoull(f[6]);
        r.mse = parse_opt_real(f[7]);
        r.j_raw = parse_opt_real(f[8]);
        r.j_norm = parse_opt_real(f[9]);
        if (!f[10].empty()) r.selected_lag = std::stoi(f[10]);
        if (!f[11].empty()) {
            if (f[11] != "0" && f[11] != "1") throw SchemaError("iv_correct must be 0 or 1");
            r.iv_correct = f[11] == "1";
        }
        r.wall_ms = parse_opt_real(f[12]);
        return r;
    } catch (const std::logic_error&) {
        throw SchemaError("malformed metric row: " + line);
    }
}

std::vector<MetricRow> read_metric_rows(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    std::string line;
    if (!std::getline(in, line)) return {};
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kMetricHeader) throw SchemaError("unexpected header in " + path.string());
    std::vector<MetricRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        rows.push_back(MetricRow::from_csv(line));
    }
    return rows;
}

std::string AggregateRow::to_csv() const {
    std::ostringstream os;
    os << experiment << ',' << env << ',' << method << ',' << n_traj << ',' << tau << ',' << dist << ',' << metric
       << ',' << format_real(mean) << ',' << format_real(std) << ',' << count;
    return os.str();
}

std::vector<AggregateRow> aggregate(const std::vector<MetricRow>& rows) {
    struct Acc {
        AggregateRow proto;
        std::map<std::string, std::vector<double>> values;
        std::vector<std::string> order;
    };
    std::vector<std::string> cell_order;
    std::map<std::string, Acc> cells;
    for (const auto& r : rows) {
        std::ostringstream k;
        k << r.experiment << ',' << r.env << ',' << r.method << ',' << r.n_traj << ',' << r.tau << ',' << r.dist;
        auto [it, fresh] = cells.try_emplace(k.str());
        if (fresh) {
            cell_order.push_back(k.str());
            it->second.proto = AggregateRow{r.experiment, r.env, r.method, r.n_traj, r.tau, r.dist, "", 0, 0, 0};
        }
        auto add = [&](const std::string& metric, std::optional<double> v) {
            if (!v) return;
            auto& vec = it->second.values[metric];
            if (vec.empty()) it->second.order.push_back(metric);
            vec.push_back(*v);
        };
        add("mse", r.mse);
        add("j_raw", r.j_raw);
        add("j_norm", r.j_norm);
        if (r.iv_correct) add("iv_accuracy", *r.iv_correct ? 1.0 : 0.0);
    }
    std::vector<AggregateRow> out;
    for (const auto& key : cell_order) {
        const Acc& acc = cells.at(key);
        for (const auto& metric : acc.order) {
            const auto& v = acc.values.at(metric);
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= static_cast<double>(v.size());
            double ss = 0.0;
            for (double x : v) ss += (x - mean) * (x - mean);
            AggregateRow a = acc.proto;
            a.metric = metric;
            a.mean = mean;
            a.std = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
            a.count = static_cast<int>(v.size());
            out.push_back(a);
        }
    }
    return out;
}

void write_aggregates(const std::vector<AggregateRow>& rows, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out << kAggregateHeader << '\n';
    for (const auto& r : rows) out << r.to_csv() << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

// ---------------------------------------------------------------------------
// Sweep configuration
// ---------------------------------------------------------------------------

std::string_view to_string(Experiment e) { return e == Experiment::T1 ? "T1" : "T2"; }

Experiment parse_experiment(std::string_view name) {
    if (name == "T1") return Experiment::T1;
    if (name == "T2") return Experiment::T2;
    throw ConfigError("unknown experiment '" + std::string(name) + "' (expected T1 or T2)");
}

SweepConfig SweepConfig::defaults(Experiment e) {
    SweepConfig c;
    c.experiment = e;
    if (e == Experiment::T1) {
        c.ivfind.w = 8;
    } else {
        c.taus = {3};
        c.dists = {Distribution::Laplace};
    }
    return c;
}

void SweepConfig::validate() const {
    env.validate();
    if (n_traj.empty() || taus.empty() || dists.empty()) throw ConfigError("sweep axes must be nonempty");
    for (int n : n_traj)
        if (n < 1) throw ConfigError("n_traj entries must be >= 1");
    for (int t : taus)
        if (t < 0) throw ConfigError("tau entries must be >= 0");
    if (seeds < 1) throw ConfigError("seeds must be >= 1");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (episodes < 1) throw ConfigError("episodes must be >= 1");
    if (probes < 1) throw ConfigError("probes must be >= 1");
    if (sigma_a < 0.0 || sigma_u < 0.0) throw ConfigError("noise scales must be >= 0");
    if (ivfind.w < 1) throw ConfigError("w must be >= 1");
    if (!(ivfind.alpha > 0.0 && ivfind.alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
    if (!(learner.eta > 0.0)) throw ConfigError("eta must be > 0");
    if (learner.rollouts < 1) throw ConfigError("rollouts must be >= 1");
}

Json SweepConfig::to_json() const {
    Json d = Json::array();
    for (auto x : dists) d.push_back(to_string(x));
    return Json{{"experiment", to_string(experiment)},
                {"env", env.to_json()},
                {"sigma_a", sigma_a},
                {"sigma_u", sigma_u},
                {"geometric_weights", geometric_weights},
                {"n_traj", n_traj},
                {"tau", taus},
                {"distributions", d},
                {"seeds", seeds},
                {"seed", seed},
                {"ivfind", ivfind.to_json()},
                {"learner", learner.to_json()},
                {"episodes", episodes},
                {"probes", probes},
                {"workers", workers},
                {"record_timing", record_timing}};
}

CellSpecs cell_specs(const SweepConfig& cfg, int tau, Distribution dist, bool confounded) {
    CellSpecs c;
    c.env = cfg.env;
    c.env.noise_dist = dist;
    c.expert = default_expert(c.env);
    c.expert.sigma_a = cfg.sigma_a;
    c.expert.dist = dist;
    c.confounder.tau = tau;
    c.confounder.dist = dist;
    c.confounder.sigma_u = confounded ? cfg.sigma_u : 0.0;
    c.confounder.weights = cfg.geometric_weights ? ConfounderSpec::geometric_weights(tau)
                                                 : ConfounderSpec::equal_weights(tau);
    return c;
}

std::uint64_t replicate_seed(const SweepConfig& cfg, int index) {
    return derive_seed({cfg.seed, "sweep-data"}, static_cast<std::uint64_t>(index));
}

double SweepResult::success_rate() const {
    return attempted == 0 ? 1.0
                          : static_cast<double>(attempted - static_cast<int>(failures.size())) /
                                static_cast<double>(attempted);
}

// ---------------------------------------------------------------------------
// Sweep driver
// ---------------------------------------------------------------------------

namespace {

struct Task {
    std::vector<MetricRow> proto;  // keys of the rows this task emits
    std::function<std::vector<MetricRow>()> run;
};

struct TaskOutcome {
    std::vector<MetricRow> rows;
    std::optional<std::string> error;
};

std::filesystem::path failures_path(const std::filesystem::path& out) {
    auto p = out;
    p += ".failures.csv";
    return p;
}

double elapsed_ms(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

// Runs the pending tasks on `workers` threads; rows are appended in task order.
SweepResult drive(const std::vector<Task>& tasks, int workers, const std::filesystem::path& out_path) {
    std::vector<MetricRow> existing;
    if (std::filesystem::exists(out_path)) existing = read_metric_rows(out_path);
    std::set<std::string> done;
    for (const auto& r : existing) done.insert(r.key());

    SweepResult res;
    std::vector<std::size_t> pending;
    for (std::size_t i = 0; i < tasks.size(); ++i) {
        bool all = true;
        for (const auto& p : tasks[i].proto) all = all && done.count(p.key());
        if (all)
            res.skipped += static_cast<int>(tasks[i].proto.size());
        else
            pending.push_back(i);
    }

    if (!out_path.parent_path().empty()) std::filesystem::create_directories(out_path.parent_path());
    const bool fresh = existing.empty();
    std::ofstream out(out_path, fresh ? std::ios::binary | std::ios::trunc : std::ios::binary | std::ios::app);
    if (!out) throw IoError("cannot write " + out_path.string());
    if (fresh) out << kMetricHeader << '\n';

    std::vector<std::optional<TaskOutcome>> outcomes(pending.size());
    std::mutex mu;
    std::condition_variable cv;
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t j = next.fetch_add(1);
            if (j >= pending.size()) return;
            TaskOutcome o;
            try {
                o.rows = tasks[pending[j]].run();
            } catch (const std::exception& e) {
                o.error = e.what();
            }
            {
                std::lock_guard<std::mutex> lock(mu);
                outcomes[j] = std::move(o);
            }
            cv.notify_all();
        }
    };
    const int n_threads = std::max(1, std::min<int>(workers, static_cast<int>(pending.size())));
    std::vector<std::thread> pool;
    for (int t = 0; t < n_threads && !pending.empty(); ++t) pool.emplace_back(worker);

    // single writer: commit outcomes strictly in task order
    for (std::size_t j = 0; j < pending.size(); ++j) {
        TaskOutcome o;
        {
            std::unique_lock<std::mutex> lock(mu);
            cv.wait(lock, [&] { return outcomes[j].has_value(); });
            o = std::move(*outcomes[j]);
            outcomes[j].reset();
        }
        res.attempted += static_cast<int>(tasks[pending[j]].proto.size());
        if (o.error) {
            for (const auto& p : tasks[pending[j]].proto) res.failures.push_back({p.key(), *o.error});
            continue;
        }
        for (const auto& r : o.rows) {
            if (done.count(r.key())) continue;
            out << r.to_csv() << '\n';
            done.insert(r.key());
        }
        out.flush();
        if (!out) throw IoError("failed writing " + out_path.string());
    }
    for (auto& t : pool) t.join();
    out.close();

    std::ofstream fail(failures_path(out_path), std::ios::binary | std::ios::trunc);
    if (!fail) throw IoError("cannot write " + failures_path(out_path).string());
    fail << "experiment,env,method,n_traj,tau,dist,seed,message\n";
    for (const auto& f : res.failures) {
        std::string msg = f.message;
        std::replace_if(msg.begin(), msg.end(), [](char c) { return c == ',' || c == '\n' || c == '\r'; }, ';');
        fail << f.key << ',' << msg << '\n';
    }

    // file order is grid order, so re-reading gives every row exactly once
    const auto all = read_metric_rows(out_path);
    std::map<std::string, const MetricRow*> by_key;
    for (const auto& r : all) by_key[r.key()] = &r;
    for (const auto& t : tasks)
        for (const auto& p : t.proto)
            if (auto it = by_key.find(p.key()); it != by_key.end()) res.rows.push_back(*it->second);
    return res;
}

MetricRow proto_row(const SweepConfig& cfg, std::string experiment, std::string method, int n, int tau,
                    Distribution dist, std::uint64_t seed) {
    MetricRow r;
    r.experiment = std::move(experiment);
    r.env = std::string(to_string(cfg.env.kind));
    r.method = std::move(method);
    r.n_traj = n;
    r.tau = tau;
    r.dist = std::string(to_string(dist));
    r.seed = seed;
    return r;
}

}  // namespace

SweepResult run_sweep_T1(const SweepConfig& cfg, const std::filesystem::path& out_path) {
    cfg.validate();
    std::vector<Task> tasks;
    for (int n : cfg.n_traj)
        for (int tau : cfg.taus)
            for (Distribution dist : cfg.dists)
                for (int s = 0; s < cfg.seeds; ++s) {
                    const std::uint64_t seed = replicate_seed(cfg, s);
                    MetricRow proto = proto_row(cfg, "T1", "ivfind", n, tau, dist, seed);
                    Task t;
                    t.proto = {proto};
                    t.run = [&cfg, proto, n, tau, dist, seed] {
                        const auto t0 = std::chrono::steady_clock::now();
                        const CellSpecs c = cell_specs(cfg, tau, dist, true);
                        const DemoSet d = gen_demoset(c.env, c.expert, c.confounder, n, seed);
                        const IVSearchResult found = find_valid_iv(d, cfg.ivfind, seed);
                        MetricRow r = proto;
                        r.selected_lag = found.selected_lag;
                        r.iv_correct = found.selected_lag && *found.selected_lag == tau;
                        if (cfg.record_timing) r.wall_ms = elapsed_ms(t0);
                        return std::vector<MetricRow>{r};
                    };
                    tasks.push_back(std::move(t));
                }
    return drive(tasks, cfg.workers, out_path);
}

SweepResult run_sweep_T2(const SweepConfig& cfg, const std::filesystem::path& out_path) {
    cfg.validate();
    std::vector<Task> tasks;
    const std::vector<std::string> methods{"BC", "C2L-sim", "C2L-offline"};
    for (int n : cfg.n_traj)
        for (int tau : cfg.taus)
            for (Distribution dist : cfg.dists)
                for (int s = 0; s < cfg.seeds; ++s)
                    for (bool confounded : {true, false}) {
                        const std::uint64_t seed = replicate_seed(cfg, s);
                        const std::string exp = confounded ? "T2-confounded" : "T2-unconfounded";
                        Task t;
                        for (const auto& m : methods) t.proto.push_back(proto_row(cfg, exp, m, n, tau, dist, seed));
                        const auto protos = t.proto;
                        t.run = [&cfg, protos, n, tau, dist, seed, confounded] {
                            const CellSpecs c = cell_specs(cfg, tau, dist, confounded);
                            const DemoSet d = gen_demoset(c.env, c.expert, c.confounder, n, seed);
                            const IVSearchResult found = find_valid_iv(d, cfg.ivfind, seed);
                            const int lag = found.selected_lag.value_or(cfg.ivfind.w);
                            const bool correct = found.selected_lag && (!confounded || *found.selected_lag >= tau);

                            LearnerConfig lc = cfg.learner;
                            lc.seed = derive_seed({seed, "learner"}, 0);
                            const Mat probes = expert_probes(c.env, c.expert, c.confounder, cfg.probes,
                                                             derive_seed({seed, "probes"}, 0));
                            // clean env, no expert corruption
                            const std::uint64_t value_seed = derive_seed({seed, "value"}, 0);
                            const ValueAnchors anchors = value_anchors(c.env, c.expert, cfg.episodes, value_seed);

                            std::vector<MetricRow> rows;
                            for (std::size_t m = 0; m < protos.size(); ++m) {
                                const auto t0 = std::chrono::steady_clock::now();
                                ParamPolicy pi;
                                if (m == 0) {
                                    pi = bc_fit(d, lc);
                                } else if (m == 1) {
                                    pi = learn_policy_sim(d, lag, c.env, lc);
                                } else {
                                    pi = learn_policy_offline(d, lag, lc).policy;
                                }
                                MetricRow r = protos[m];
                                r.mse = action_mse(pi, c.expert.policy, probes);
                                const PolicyValue v = policy_value(pi, c.env, cfg.episodes, value_seed, anchors);
                                r.j_raw = v.j_raw;
                                r.j_norm = v.j_norm;
                                r.selected_lag = found.selected_lag;
                                r.iv_correct = correct;
                                if (cfg.record_timing) r.wall_ms = elapsed_ms(t0);
                                rows.push_back(r);
                            }
                            return rows;
                        };
                        tasks.push_back(std::move(t));
                    }
    return drive(tasks, cfg.workers, out_path);
}

SweepResult run_sweep(const SweepConfig& cfg, const std::filesystem::path& out_path) {
    return cfg.experiment == Experiment::T1 ? run_sweep_T1(cfg, out_path) : run_sweep_T2(cfg, out_path);
}

// ---------------------------------------------------------------------------
// Charts
// ---------------------------------------------------------------------------

namespace {

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out.push_back(c);
        }
    }
    return out;
}

std::string fmt(double x, int prec = 4) {
    std::ostringstream os;
    os << std::setprecision(prec) << x;
    return os.str();
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                          "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

}  // namespace

std::string svg_line_chart(const Chart& chart) {
    const double W = 640, H = 420, left = 70, right = 190, top = 40, bottom = 60;
    const double pw = W - left - right, ph = H - top - bottom;
    double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
    for (const auto& s : chart.series)
        for (const auto& [x, y] : s.points) {
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (!std::isfinite(xmin)) xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    if (xmax == xmin) xmin -= 1, xmax += 1;
    if (ymax == ymin) ymin -= 0.5, ymax += 0.5;
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;
    auto X = [&](double x) { return left + (x - xmin) / (xmax - xmin) * pw; };
    auto Y = [&](double y) { return top + (1.0 - (y - ymin) / (ymax - ymin)) * ph; };

    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << left + pw / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"14\">"
       << xml_escape(chart.title) << "</text>\n";
    os << "<rect x=\"" << left << "\" y=\"" << top << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double yv = ymin + (ymax - ymin) * i / 4.0;
        const double xv = xmin + (xmax - xmin) * i / 4.0;
        os << "<line x1=\"" << left << "\" x2=\"" << left + pw << "\" y1=\"" << Y(yv) << "\" y2=\"" << Y(yv)
           << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << left - 6 << "\" y=\"" << Y(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv)
           << "</text>\n";
        os << "<text x=\"" << X(xv) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << fmt(xv)
           << "</text>\n";
    }
    os << "<text x=\"" << left + pw / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\">"
       << xml_escape(chart.x_label) << "</text>\n";
    os << "<text x=\"18\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
       << top + ph / 2 << ")\">" << xml_escape(chart.y_label) << "</text>\n";
    for (std::size_t k = 0; k < chart.series.size(); ++k) {
        const auto& s = chart.series[k];
        const char* color = kPalette[k % (sizeof(kPalette) / sizeof(kPalette[0]))];
        os << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < s.points.size(); ++i)
            os << (i ? " " : "") << X(s.points[i].first) << ',' << Y(s.points[i].second);
        os << "\"/>\n";
        for (const auto& [x, y] : s.points)
            os << "<circle cx=\"" << X(x) << "\" cy=\"" << Y(y) << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        const double ly = top + 14 + 18.0 * k;
        os << "<line x1=\"" << left + pw + 12 << "\" x2=\"" << left + pw + 32 << "\" y1=\"" << ly << "\" y2=\"" << ly
           << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\">" << xml_escape(s.label) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

namespace {

// Count-weighted mean of one metric versus N, one series per label.
Chart series_by(const std::vector<AggregateRow>& agg, const std::string& metric,
                const std::function<std::optional<std::string>(const AggregateRow&)>& label, Chart chart) {
    std::vector<std::string> order;
    std::map<std::string, std::map<int, std::pair<double, int>>> acc;
    for (const auto& a : agg) {
        if (a.metric != metric) continue;
        const auto l = label(a);
        if (!l) continue;
        if (!acc.count(*l)) order.push_back(*l);
        auto& cell = acc[*l][a.n_traj];
        cell.first += a.mean * a.count;
        cell.second += a.count;
    }
    for (const auto& l : order) {
        ChartSeries s;
        s.label = l;
        for (const auto& [n, v] : acc[l]) s.points.emplace_back(n, v.first / v.second);
        chart.series.push_back(std::move(s));
    }
    return chart;
}

}  // namespace

std::map<std::string, Chart> sweep_charts(Experiment e, const std::vector<AggregateRow>& agg) {
    std::map<std::string, Chart> out;
    if (e == Experiment::T1) {
        out["accuracy_vs_n_by_dist.svg"] = series_by(
            agg, "iv_accuracy", [](const AggregateRow& a) { return std::optional<std::string>(a.dist); },
            Chart{"IV identification accuracy", "number of trajectories N", "accuracy", {}});
        out["accuracy_vs_n_by_tau.svg"] = series_by(
            agg, "iv_accuracy",
            [](const AggregateRow& a) { return std::optional<std::string>("tau=" + std::to_string(a.tau)); },
            Chart{"IV identification accuracy", "number of trajectories N", "accuracy", {}});
        return out;
    }
    auto by_method = [](const AggregateRow& a) {
        const std::string block = a.experiment == "T2-confounded" ? "confounded" : "unconfounded";
        return std::optional<std::string>(a.method + " (" + block + ")");
    };
    out["mse_vs_n.svg"] = series_by(agg, "mse", by_method, Chart{"Action MSE vs expert", "number of trajectories N", "MSE", {}});
    out["j_norm_vs_n.svg"] = series_by(agg, "j_norm", by_method,
                                       Chart{"Normalized policy value", "number of trajectories N", "J (normalized)", {}});
    return out;
}

}  // namespace c2l
