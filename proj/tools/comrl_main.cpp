// Command-line front end: data generation, training runs, meta-testing,
// frequency ablations, timing/plot tables and the tabular theory checks.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "comrl/harness.hpp"
#include "comrl/theorylab.hpp"

namespace fs = std::filesystem;
using namespace comrl;

namespace {

struct CommonOpts {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::string out_dir;
};

harness::TrainingConfig load_config(const CommonOpts& opts) {
    harness::TrainingConfig cfg = opts.config_path.empty()
                                      ? harness::TrainingConfig::with_preset("desk")
                                      : harness::TrainingConfig::from_file(opts.config_path);
    if (opts.seed_set) cfg.seed = opts.seed;
    if (!opts.out_dir.empty()) cfg.out_dir = opts.out_dir;
    return cfg;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "config file (key=value lines)");
    cmd->add_option("--seed", opts.seed, "seed override")->each([&](const std::string&) {
        opts.seed_set = true;
    });
    cmd->add_option("--out-dir", opts.out_dir, "output directory override");
}

int report_outcome(const theorylab::BoundReport& report, const std::string& out_path) {
    std::printf("%s: configs=%d violations=%d min_margin=%.3e runtime=%.2fs%s\n",
                report.sweep_name.c_str(), report.n_configs, report.n_violations,
                report.min_margin, report.runtime_seconds,
                report.passed() ? "" : "  [FAILED]");
    if (report.sweep_name == "perf_diff_bound")
        std::printf("  monotonicity condition held on %d configs, improvement on %d of those\n",
                    report.n_condition_holds, report.n_condition_and_improved);
    if (!out_path.empty()) theorylab::write_report_json(out_path, report);
    return report.passed() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"context-based offline meta-RL lab"};
    app.require_subcommand(1);

    // ---- gen-data ----
    CommonOpts gen_opts;
    std::string gen_family = "PointGoal2D";
    int gen_n_train = 20, gen_n_test = 20, gen_transitions = 2100;
    double gen_noise = 0.3, gen_mixture = 0.5;
    std::string gen_kind = "noisy_expert";
    auto* gen = app.add_subcommand("gen-data", "generate offline task datasets");
    add_common(gen, gen_opts);
    gen->add_option("--family", gen_family, "PointGoal2D | GridChainDir");
    gen->add_option("--n-train", gen_n_train, "training task count");
    gen->add_option("--n-test", gen_n_test, "test task count");
    gen->add_option("--transitions-per-task", gen_transitions, "dataset size per task");
    gen->add_option("--noise-scale", gen_noise, "behavior policy noise scale");
    gen->add_option("--policy-kind", gen_kind, "noisy_expert | uniform_random | mixture");
    gen->add_option("--mixture-weight", gen_mixture, "expert episode share for mixture");

    // ---- train ----
    CommonOpts train_opts;
    std::string train_data_dir;
    std::string train_label;
    std::string train_preset;
    int train_freq = 0;
    long train_steps = -1;
    auto* train = app.add_subcommand("train", "run the meta-training loop");
    add_common(train, train_opts);
    train->add_option("--data-dir", train_data_dir, "dataset directory");
    train->add_option("--run-label", train_label, "label used in comparison tables");
    train->add_option("--preset", train_preset, "desk | paper");
    train->add_option("--update-frequency", train_freq, "encoder update gate period");
    train->add_option("--total-steps", train_steps, "training step budget");

    // ---- meta-test ----
    std::string mt_run_dir;
    int mt_episodes = 10;
    std::uint64_t mt_seed = 0;
    auto* mt = app.add_subcommand("meta-test", "few-shot offline evaluation of a finished run");
    mt->add_option("--run-dir", mt_run_dir, "run directory (out_dir of train)")->required();
    mt->add_option("--n-episodes", mt_episodes, "episodes per test task");
    mt->add_option("--seed", mt_seed, "context sampling seed");

    // ---- ablate-frequency ----
    CommonOpts ab_opts;
    std::string ab_data_dir;
    std::vector<int> ab_freqs = {1, 2, 4, 8};
    std::vector<std::uint64_t> ab_seeds = {0, 1, 2, 3};
    auto* ab = app.add_subcommand("ablate-frequency", "sweep encoder update frequencies");
    add_common(ab, ab_opts);
    ab->add_option("--data-dir", ab_data_dir, "dataset directory");
    ab->add_option("--frequencies", ab_freqs, "subset of {1,2,4,8}");
    ab->add_option("--seeds", ab_seeds, "seeds, one run per (frequency, seed)");

    // ---- walltime ----
    std::vector<std::string> wt_runs;
    std::string wt_out;
    auto* wt = app.add_subcommand("walltime", "wall-clock comparison of finished runs");
    wt->add_option("--runs", wt_runs, "run directories")->required()->expected(-2);
    wt->add_option("--out", wt_out, "output CSV path");

    // ---- plot-data ----
    std::vector<std::string> pd_runs;
    std::string pd_out = "plot_data.csv";
    auto* pd = app.add_subcommand("plot-data", "long-format metric table across runs/seeds");
    pd->add_option("--runs", pd_runs, "run directories")->required()->expected(-1);
    pd->add_option("--out", pd_out, "output CSV path");

    // ---- theory ----
    auto* theory = app.add_subcommand("theory", "tabular verification of the bounds");
    theory->require_subcommand(1);
    int th_configs = 1000, th_trials = 10000;
    std::uint64_t th_seed = 0;
    std::string th_out;

    auto* th_return = theory->add_subcommand("return-bound", "return-bound sweep");
    auto* th_perf = theory->add_subcommand("perf-diff", "performance-difference sweep");
    auto* th_lemma = theory->add_subcommand("lemma-a1", "two-model return gap sweep");
    for (auto* sub : {th_return, th_perf, th_lemma}) {
        sub->add_option("--n-configs", th_configs, "randomized configs");
        sub->add_option("--seed", th_seed, "sweep seed");
        sub->add_option("--out", th_out, "JSON report path");
    }

    auto* th_weissman = theory->add_subcommand("weissman", "empirical L1 deviation tail check");
    int we_alphabet = 2, we_samples = 100;
    double we_eps = 0.3;
    bool we_grid = false;
    th_weissman->add_option("--alphabet", we_alphabet, "alphabet size");
    th_weissman->add_option("--samples", we_samples, "samples per trial (m)");
    th_weissman->add_option("--eps", we_eps, "deviation threshold");
    th_weissman->add_option("--n-trials", th_trials, "Monte Carlo trials");
    th_weissman->add_option("--seed", th_seed, "seed");
    th_weissman->add_flag("--grid", we_grid, "run the full acceptance grid");

    auto* th_coro = theory->add_subcommand("corollary", "extra-sample count check");
    theorylab::CorollaryConfig coro;
    long coro_n = 0;
    th_coro->add_option("--r-max", coro.r_max, "reward bound");
    th_coro->add_option("--gamma", coro.gamma, "discount");
    th_coro->add_option("--l-z", coro.l_z, "policy Lipschitz constant");
    th_coro->add_option("--eps-mutual", coro.eps_mutual, "policy improvement under Z_mutual");
    th_coro->add_option("--beta", coro.beta, "representation shift bound");
    th_coro->add_option("--vol-z", coro.vol_z, "latent alphabet size");
    th_coro->add_option("--xi", coro.xi, "failure probability");
    th_coro->add_option("--n-pretrain", coro_n, "samples already used (N)");
    th_coro->add_option("--n-trials", th_trials, "Monte Carlo trials");
    th_coro->add_option("--seed", th_seed, "seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            harness::TrainingConfig cfg = load_config(gen_opts);
            cfg.family = envlab::family_from_name(gen_family);
            cfg.n_train_tasks = gen_n_train;
            cfg.n_test_tasks = gen_n_test;
            cfg.transitions_per_task = gen_transitions;
            cfg.noise_scale = gen_noise;
            cfg.behavior_kind = gen_kind;
            cfg.mixture_weight = gen_mixture;
            if (!gen_opts.out_dir.empty()) cfg.data_dir = gen_opts.out_dir;
            const auto tasks = harness::gen_datasets(cfg);
            std::printf("wrote %zu task datasets to %s\n", tasks.size(), cfg.data_dir.c_str());
            return 0;
        }
        if (*train) {
            harness::TrainingConfig cfg = load_config(train_opts);
            if (!train_data_dir.empty()) cfg.data_dir = train_data_dir;
            if (!train_label.empty()) cfg.run_label = train_label;
            if (!train_preset.empty()) {
                harness::TrainingConfig preset = harness::TrainingConfig::with_preset(train_preset);
                preset.seed = cfg.seed;
                preset.out_dir = cfg.out_dir;
                preset.data_dir = cfg.data_dir;
                preset.run_label = cfg.run_label;
                cfg = preset;
            }
            if (train_freq > 0) cfg.update_frequency = train_freq;
            if (train_steps >= 0) cfg.total_steps = train_steps;
            const harness::RunArtifacts art = harness::run_training(cfg);
            std::printf("run complete: %s (encoder updates %ld, wall %.1fs, final return %.3f)\n",
                        art.out_dir.c_str(), art.encoder_updates, art.wall_seconds,
                        art.final_mean_return);
            return 0;
        }
        if (*mt) {
            const harness::RunArtifacts art = harness::load_artifacts(mt_run_dir);
            const harness::MetaTestResult res = harness::run_meta_test(art, mt_episodes, mt_seed);
            for (const auto& row : res.rows)
                std::printf("task %d: %.3f +- %.3f\n", row.task_id, row.mean_return,
                            row.std_return);
            std::printf("aggregate: %.3f +- %.3f  (%s)\n", res.aggregate_mean, res.aggregate_std,
                        res.csv_path.c_str());
            return 0;
        }
        if (*ab) {
            harness::TrainingConfig cfg = load_config(ab_opts);
            if (!ab_data_dir.empty()) cfg.data_dir = ab_data_dir;
            const harness::AblationTable table =
                harness::run_ablation_frequency(cfg, ab_freqs, ab_seeds);
            std::printf("frequency ablation table: %s\n", table.csv_path.c_str());
            for (const auto& r : table.rows)
                std::printf("  freq=%d seed=%llu return=%.3f updates=%ld wall=%.1fs\n",
                            r.frequency, static_cast<unsigned long long>(r.seed), r.final_return,
                            r.encoder_updates, r.wall_seconds);
            return 0;
        }
        if (*wt) {
            std::vector<harness::RunArtifacts> runs;
            for (const auto& dir : wt_runs) runs.push_back(harness::load_artifacts(dir));
            const auto rows = harness::report_walltime(runs);
            for (const auto& r : rows)
                std::printf("%-16s seed=%llu wall=%.2fs updates=%ld ratio=%.3f\n",
                            r.run_label.c_str(), static_cast<unsigned long long>(r.seed),
                            r.wall_seconds, r.encoder_updates, r.ratio_vs_first);
            if (!wt_out.empty()) harness::write_walltime_csv(wt_out, rows);
            return 0;
        }
        if (*pd) {
            const auto rows = harness::emit_plot_data(pd_runs);
            harness::write_plot_csv(pd_out, rows);
            std::printf("wrote %zu plot rows to %s\n", rows.size(), pd_out.c_str());
            return 0;
        }
        if (*th_return)
            return report_outcome(theorylab::verify_return_bound(th_configs, th_seed), th_out);
        if (*th_perf)
            return report_outcome(theorylab::verify_perf_diff_bound(th_configs, th_seed), th_out);
        if (*th_lemma)
            return report_outcome(theorylab::lemma_a1_check(th_configs, th_seed), th_out);
        if (*th_weissman) {
            bool all_ok = true;
            auto run_cell = [&](int a, int m, double eps) {
                const theorylab::WeissmanResult res =
                    theorylab::verify_weissman(a, m, eps, th_trials, th_seed);
                std::printf("|A|=%d m=%d eps=%.2f: empirical=%.5f bound=%.5f%s\n", a, m, eps,
                            res.empirical_rate, res.analytic_bound, res.ok ? "" : "  [FAILED]");
                all_ok = all_ok && res.ok;
            };
            if (we_grid) {
                for (int a : {2, 4, 8})
                    for (int m : {10, 100, 1000})
                        for (double eps : {0.1, 0.3, 0.5}) run_cell(a, m, eps);
            } else {
                run_cell(we_alphabet, we_samples, we_eps);
            }
            return all_ok ? 0 : 1;
        }
        if (*th_coro) {
            coro.n_pretrain = coro_n;
            const theorylab::CorollaryK k = theorylab::corollary_k(coro);
            const theorylab::CorollaryVerification res =
                theorylab::verify_corollary(coro, th_trials, th_seed);
            std::printf("k=%.4f ceil(k)=%ld samples/trial=%ld\n", k.k, k.k_ceil,
                        res.samples_per_trial);
            std::printf("success=%.4f required=%.4f%s\n", res.success_rate, res.required_rate,
                        res.ok ? "" : "  [FAILED]");
            return res.ok ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
