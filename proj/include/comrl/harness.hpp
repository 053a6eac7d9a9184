#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "comrl/envlab.hpp"
#include "comrl/offlinerl.hpp"
#include "comrl/taskenc.hpp"

namespace comrl::harness {

// Full experiment configuration. The "paper" preset mirrors the reference
// hyperparameter table verbatim; "desk" scales the networks and learning
// rate down for fast deterministic runs.
struct TrainingConfig {
    std::string preset = "desk";
    envlab::TaskFamily family = envlab::TaskFamily::PointGoal2D;
    int n_train_tasks = 20;
    int n_test_tasks = 20;
    int task_batch_size = 16;
    int rl_batch_size = 256;
    int context_trajectories = 1;
    int update_frequency = 2;
    taskenc::LossKind loss_kind = taskenc::LossKind::classifier;
    double learning_rate = 3e-4;
    double encoder_learning_rate = 3e-3;
    long total_steps = 2000;
    long eval_interval = 500;
    long steps_per_iteration = 100;
    std::uint64_t seed = 0;
    std::string out_dir = "runs/run";
    std::string data_dir = "data";
    std::string run_label;

    int d_z = 5;
    std::vector<int> actor_widths = {64, 64};
    std::vector<int> critic_widths = {64, 64};
    std::vector<int> encoder_widths = {32, 32};

    double alpha_kl = 1.0;
    double tau = 0.005;
    long behavior_clone_steps = 1000;
    int eval_episodes = 10;
    double focal_beta = 0.5;
    double recon_weight = 1.0;

    // data generation
    int transitions_per_task = 2100;
    double noise_scale = 0.3;
    std::string behavior_kind = "noisy_expert";
    double mixture_weight = 0.5;

    int probe_contexts = 32;
    int holdout_trajectories = 5;
    bool bound_latent = true;

    static TrainingConfig with_preset(const std::string& name);
    static TrainingConfig from_file(const std::string& path);
    void set_key(const std::string& key, const std::string& value);
    void validate() const;

    // Canonical key=value dump; identical configs produce identical text.
    std::string canonical_text() const;
    // FNV-1a hex digest of the canonical text; stamped into every artifact.
    std::string digest() const;

    taskenc::EncoderConfig encoder_config() const;
};

struct RunArtifacts {
    std::string out_dir;
    std::string config_digest;
    std::string run_label;
    std::uint64_t seed = 0;
    long total_steps = 0;
    long encoder_updates = 0;
    double wall_seconds = 0.0;        // training loop only
    double clone_seconds = 0.0;       // behavior pre-clone
    std::string returns_csv;
    std::string accuracy_csv;
    std::string shift_csv;
    std::string config_snapshot;
    std::map<std::string, std::string> checkpoints;
    double final_mean_return = 0.0;   // mean over test tasks at the last eval
    double final_accuracy = 0.0;
};

// Writes task list and per-task dataset files into config.data_dir.
// Returns the generated task specs.
std::vector<envlab::TaskSpec> gen_datasets(const TrainingConfig& config);

void save_tasks(const std::string& path, const std::vector<envlab::TaskSpec>& tasks);
std::vector<envlab::TaskSpec> load_tasks(const std::string& path);

// Runs the gated-encoder + BRAC training loop; deterministic given
// (config, seed). Throws HarnessError after writing a diagnostic snapshot if
// a loss or metric goes non-finite, and on any post-run invariant violation.
RunArtifacts run_training(const TrainingConfig& config);

// Reads the manifest of a finished run.
RunArtifacts load_artifacts(const std::string& out_dir);

struct MetaTestRow {
    int task_id = 0;
    double mean_return = 0.0;
    double std_return = 0.0;
    long context_id = 0;
};

struct MetaTestResult {
    std::vector<MetaTestRow> rows;
    double aggregate_mean = 0.0;
    double aggregate_std = 0.0;  // std of per-task means
    std::string csv_path;
};

// Few-shot offline meta-test: one trajectory context per test task, encoded
// once, then the mean policy is rolled out in the true environment.
MetaTestResult run_meta_test(const RunArtifacts& artifacts, int n_episodes, std::uint64_t seed);

struct AblationRow {
    int frequency = 0;
    std::uint64_t seed = 0;
    double final_return = 0.0;
    long encoder_updates = 0;
    double wall_seconds = 0.0;
    double mean_shift = 0.0;
    double max_shift = 0.0;
    bool finite = true;
};

struct AblationTable {
    std::vector<AblationRow> rows;
    std::string csv_path;
};

// One run per (frequency, seed); frequencies must be within {1,2,4,8}.
AblationTable run_ablation_frequency(const TrainingConfig& base,
                                     const std::vector<int>& frequencies,
                                     const std::vector<std::uint64_t>& seeds);

struct WalltimeRow {
    std::string run_label;
    std::uint64_t seed = 0;
    long total_steps = 0;
    long encoder_updates = 0;
    double wall_seconds = 0.0;
    double ratio_vs_first = 1.0;
};

// Wall-clock comparison across runs with identical step budgets.
std::vector<WalltimeRow> report_walltime(const std::vector<RunArtifacts>& runs);

void write_walltime_csv(const std::string& path, const std::vector<WalltimeRow>& rows);

struct PlotRow {
    long step = 0;
    std::string metric;
    std::string run_label;
    std::uint64_t seed = 0;
    double value = 0.0;
    double mean = 0.0;  // across seeds of the same run_label at this step
    double std = 0.0;
    int n_seeds = 0;
};

// Long-format plot table aggregated across seeds; inconsistent step grids
// are resampled to the coarsest grid with a warning on stderr.
std::vector<PlotRow> emit_plot_data(const std::vector<std::string>& run_dirs);

void write_plot_csv(const std::string& path, const std::vector<PlotRow>& rows);

}  // namespace comrl::harness
