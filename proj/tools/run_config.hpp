#pragma once

#include "c2l/evalharness.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace c2l::cli {

/// Single JSON document configuring every command. Unknown keys are rejected
/// and every error names the offending field.
struct RunConfig {
    std::uint64_t seed = 0;
    EnvSpec env = default_linear_env(0);
    double sigma_a = 0.1;
    Distribution expert_dist = Distribution::Laplace;
    ConfounderSpec confounder{};
    int n_traj = 50;
    IVFindConfig ivfind{};
    LearnerConfig learner{};
    int episodes = 20;
    int probes = 2000;

    Experiment experiment = Experiment::T1;
    std::vector<int> sweep_n_traj{10, 20, 30, 40, 50};
    std::vector<int> sweep_taus{3, 4, 5, 6, 7};
    std::vector<Distribution> sweep_dists = all_distributions();
    int sweep_seeds = 10;
    bool geometric_weights = false;
    bool record_timing = false;

    int workers = 1;
    std::string out_dir = "out";

    /// Expert for `env` with the configured action noise.
    ExpertSpec expert() const;
    SweepConfig sweep() const;

    void validate() const;
    Json to_json() const;
};

/// Parses and validates; ConfigError names the field on failure.
RunConfig parse_run_config(const Json& j);
RunConfig load_run_config(const std::filesystem::path& path);

/// An env file holds either a full RunConfig or a bare env object.
EnvSpec load_env(const std::filesystem::path& path, RunConfig* full = nullptr);

Json read_json_file(const std::filesystem::path& path);
void write_json_file(const Json& j, const std::filesystem::path& path);

/// --seed wins over C2L_SEED, which wins over the config value.
std::uint64_t resolve_seed(std::uint64_t config_seed, const std::optional<std::uint64_t>& flag);

}  // namespace c2l::cli
