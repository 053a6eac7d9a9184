#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "comrl/dataset_io.hpp"
#include "comrl/harness.hpp"

namespace comrl::harness {

namespace fs = std::filesystem;
using diffcompute::OptimizerState;
using diffcompute::Tape;

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

struct ReturnsRow {
    long train_step = 0;
    int task_id = 0;
    double mean_return = 0.0;
    double std_return = 0.0;
    long context_id = 0;
    std::uint64_t seed = 0;
};

struct AccuracyRow {
    long train_step = 0;
    double accuracy = 0.0;
    double encoder_loss = 0.0;
};

void require_finite(double v, const char* what) {
    if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite metric: ") + what);
}

void write_returns_csv(const std::string& path, const std::vector<ReturnsRow>& rows,
                       const std::string& digest) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw std::runtime_error("cannot open " + path);
    file << "# config_digest=" << digest << "\n";
    file << "train_step,task_id,mean_return,std_return,context_id,seed\n";
    for (const auto& r : rows)
        file << r.train_step << "," << r.task_id << "," << fmt_double(r.mean_return) << ","
             << fmt_double(r.std_return) << "," << r.context_id << "," << r.seed << "\n";
}

void write_accuracy_csv(const std::string& path, const std::vector<AccuracyRow>& rows,
                        const std::string& digest) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw std::runtime_error("cannot open " + path);
    file << "# config_digest=" << digest << "\n";
    file << "train_step,accuracy,encoder_loss\n";
    for (const auto& r : rows)
        file << r.train_step << "," << fmt_double(r.accuracy) << ","
             << fmt_double(r.encoder_loss) << "\n";
}

// The training-time state bundle around taskenc + offlinerl.
struct TrainState {
    taskenc::EncoderConfig enc_cfg;
    taskenc::EncoderModel enc_model;
    taskenc::TaskEncoder encoder;
    taskenc::ClassifierHead head;
    diffcompute::ApproximatorSpec dec_spec;
    diffcompute::ParameterVector dec_params;
    bool has_decoder = false;
    OptimizerState enc_opt, head_opt, dec_opt;
    offlinerl::BracTrainer rl;
};

double held_out_accuracy(const TrainState& st, const std::vector<core::Context>& contexts,
                         const std::vector<int>& labels) {
    long correct = 0;
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        const core::LatentZ z = taskenc::encode(st.enc_model, st.encoder.params, contexts[i]);
        const std::vector<double> logits =
            diffcompute::forward(st.head.spec, st.head.params, z.values);
        int best = 0;
        for (int c = 1; c < static_cast<int>(logits.size()); ++c)
            if (logits[static_cast<std::size_t>(c)] > logits[static_cast<std::size_t>(best)])
                best = c;
        if (best == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(contexts.size());
}

// One gated encoder update on the sampled contexts; returns the loss value.
double encoder_update(TrainState& st, const std::vector<core::Context>& contexts,
                      const std::vector<int>& labels) {
    Tape tape;
    const Tape::Node enc = tape.param(st.encoder.params);
    Tape::Node loss = -1;
    Tape::Node head_node = -1;
    Tape::Node dec_node = -1;
    switch (st.enc_cfg.loss_kind) {
        case taskenc::LossKind::classifier: {
            head_node = tape.param(st.head.params);
            loss = taskenc::classifier_loss_node(tape, st.enc_model, enc, st.head.spec,
                                                 head_node, contexts, labels);
            break;
        }
        case taskenc::LossKind::focal_metric: {
            loss = taskenc::focal_metric_loss_node(tape, st.enc_model, enc, contexts, labels,
                                                   st.enc_cfg.focal_beta, st.enc_cfg.focal_eps);
            break;
        }
        case taskenc::LossKind::reconstruction: {
            dec_node = tape.param(st.dec_params);
            loss = taskenc::reconstruction_loss_node(tape, st.enc_model, enc, st.dec_spec,
                                                     dec_node, contexts);
            break;
        }
        case taskenc::LossKind::classifier_plus_reconstruction: {
            head_node = tape.param(st.head.params);
            dec_node = tape.param(st.dec_params);
            const Tape::Node ce = taskenc::classifier_loss_node(
                tape, st.enc_model, enc, st.head.spec, head_node, contexts, labels);
            const Tape::Node recon = taskenc::reconstruction_loss_node(
                tape, st.enc_model, enc, st.dec_spec, dec_node, contexts);
            loss = tape.add(ce, tape.scale(recon, st.enc_cfg.recon_weight));
            break;
        }
    }
    tape.backward(loss);
    diffcompute::adam_step(st.encoder.params, tape.grad(enc).v, st.enc_opt);
    if (head_node >= 0)
        diffcompute::adam_step(st.head.params, tape.grad(head_node).v, st.head_opt);
    if (dec_node >= 0) diffcompute::adam_step(st.dec_params, tape.grad(dec_node).v, st.dec_opt);
    return tape.scalar(loss);
}

// Linear-probe head step for loss kinds that do not train the head jointly;
// keeps the logged accuracy proxy meaningful for every loss kind.
void probe_head_update(TrainState& st, const std::vector<core::Context>& contexts,
                       const std::vector<int>& labels) {
    std::vector<Tape::Node> zs;
    Tape tape;
    const Tape::Node head_node = tape.param(st.head.params);
    zs.reserve(contexts.size());
    for (const auto& c : contexts)
        zs.push_back(tape.leaf(taskenc::encode(st.enc_model, st.encoder.params, c).values));
    const Tape::Node logits =
        diffcompute::mlp_forward(tape, st.head.spec, head_node, tape.stack_rows(zs));
    const Tape::Node loss = tape.softmax_cross_entropy(logits, labels);
    tape.backward(loss);
    diffcompute::adam_step(st.head.params, tape.grad(head_node).v, st.head_opt);
}

nlohmann::json artifacts_to_json(const RunArtifacts& a, double mean_shift, double max_shift,
                                 const std::string& data_dir, const std::string& family) {
    nlohmann::json j;
    j["config_digest"] = a.config_digest;
    j["run_label"] = a.run_label;
    j["seed"] = a.seed;
    j["total_steps"] = a.total_steps;
    j["encoder_updates"] = a.encoder_updates;
    j["wall_seconds"] = a.wall_seconds;
    j["clone_seconds"] = a.clone_seconds;
    j["returns_csv"] = a.returns_csv;
    j["accuracy_csv"] = a.accuracy_csv;
    j["shift_csv"] = a.shift_csv;
    j["config_snapshot"] = a.config_snapshot;
    j["checkpoints"] = a.checkpoints;
    j["final_mean_return"] = a.final_mean_return;
    j["final_accuracy"] = a.final_accuracy;
    j["mean_shift"] = mean_shift;
    j["max_shift"] = max_shift;
    j["data_dir"] = data_dir;
    j["family"] = family;
    return j;
}

}  // namespace

RunArtifacts run_training(const TrainingConfig& cfg) {
    cfg.validate();
    if (cfg.task_batch_size > cfg.n_train_tasks)
        throw std::invalid_argument("run_training: task_batch_size exceeds n_train_tasks");
    fs::create_directories(cfg.out_dir);
    const std::string digest = cfg.digest();

    // --- data ---------------------------------------------------------------
    const std::string tasks_path = (fs::path(cfg.data_dir) / "tasks.txt").string();
    if (!fs::exists(tasks_path))
        throw std::runtime_error("run_training: missing dataset (no tasks.txt in " + cfg.data_dir +
                                 "); run gen-data first");
    const std::vector<envlab::TaskSpec> tasks = load_tasks(tasks_path);
    const int n_total = cfg.n_train_tasks + cfg.n_test_tasks;
    if (static_cast<int>(tasks.size()) < n_total)
        throw std::runtime_error("run_training: task list smaller than configured task counts");

    std::vector<core::OfflineTaskDataset> train_data;
    std::vector<core::OfflineTaskDataset> test_data;
    for (int id = 0; id < n_total; ++id) {
        char name[64];
        std::snprintf(name, sizeof(name), "task_%03d.bin", id);
        const std::string path = (fs::path(cfg.data_dir) / name).string();
        if (!fs::exists(path))
            throw std::runtime_error("run_training: missing dataset file " + path);
        core::OfflineTaskDataset ds = core::read_dataset(path);
        if (id < cfg.n_train_tasks)
            train_data.push_back(std::move(ds));
        else
            test_data.push_back(std::move(ds));
    }

    const int state_dim = train_data.front().state_dim();
    const int action_dim = train_data.front().action_dim();
    const double action_scale =
        cfg.family == envlab::TaskFamily::PointGoal2D ? envlab::kPointActionMax : 1.0;

    // train/holdout trajectory split per training task
    std::vector<std::vector<core::Trajectory>> train_trajs(train_data.size());
    std::vector<std::vector<core::Trajectory>> holdout_trajs(train_data.size());
    for (std::size_t t = 0; t < train_data.size(); ++t) {
        std::vector<core::Trajectory> all = train_data[t].trajectories();
        if (static_cast<int>(all.size()) <= cfg.holdout_trajectories)
            throw std::runtime_error("run_training: not enough trajectories for holdout split");
        holdout_trajs[t].assign(all.end() - cfg.holdout_trajectories, all.end());
        all.resize(all.size() - static_cast<std::size_t>(cfg.holdout_trajectories));
        train_trajs[t] = std::move(all);
    }
    // flat train transitions per task for RL batches
    std::vector<std::vector<core::TransitionRecord>> train_rows(train_data.size());
    for (std::size_t t = 0; t < train_trajs.size(); ++t)
        for (const auto& traj : train_trajs[t])
            train_rows[t].insert(train_rows[t].end(), traj.transitions.begin(),
                                 traj.transitions.end());

    // fixed probe set: held-out contexts stratified over training tasks
    std::vector<core::Context> probes;
    for (int i = 0; i < cfg.probe_contexts; ++i) {
        const std::size_t task = static_cast<std::size_t>(i) % train_data.size();
        const auto& pool = holdout_trajs[task];
        probes.push_back(core::Context::from_trajectory(
            pool[static_cast<std::size_t>(i) / train_data.size() % pool.size()]));
    }
    // held-out accuracy set
    std::vector<core::Context> heldout_contexts;
    std::vector<int> heldout_labels;
    for (std::size_t t = 0; t < holdout_trajs.size(); ++t)
        for (const auto& traj : holdout_trajs[t]) {
            heldout_contexts.push_back(core::Context::from_trajectory(traj));
            heldout_labels.push_back(static_cast<int>(t));
        }

    // fixed per-test-task evaluation contexts
    Rng rng_eval = Rng::derive(cfg.seed, 0xe7a1);
    std::vector<core::Trajectory> eval_contexts;
    std::vector<long> eval_context_ids;
    for (auto& ds : test_data) {
        const std::vector<core::Trajectory> trajs = ds.trajectories();
        const std::size_t idx = rng_eval.index(trajs.size());
        eval_contexts.push_back(trajs[idx]);
        eval_context_ids.push_back(static_cast<long>(idx));
    }

    // --- models ---------------------------------------------------------------
    Rng rng_init = Rng::derive(cfg.seed, 0x1417);
    TrainState st;
    st.enc_cfg = cfg.encoder_config();
    st.enc_model = st.enc_cfg.encoder_model(state_dim, action_dim);
    st.encoder.model = st.enc_model;
    st.encoder.params = diffcompute::init_params(st.enc_model.net, rng_init);
    st.head.spec = st.enc_cfg.head_spec(cfg.n_train_tasks);
    st.head.params = diffcompute::init_params(st.head.spec, rng_init);
    st.enc_opt = OptimizerState::for_params(st.encoder.params, cfg.encoder_learning_rate);
    st.head_opt = OptimizerState::for_params(st.head.params, cfg.encoder_learning_rate);
    st.has_decoder = st.enc_cfg.loss_kind == taskenc::LossKind::reconstruction ||
                     st.enc_cfg.loss_kind == taskenc::LossKind::classifier_plus_reconstruction;
    if (st.has_decoder) {
        st.dec_spec = st.enc_cfg.decoder_spec(state_dim, action_dim);
        st.dec_params = diffcompute::init_params(st.dec_spec, rng_init);
        st.dec_opt = OptimizerState::for_params(st.dec_params, cfg.encoder_learning_rate);
    }

    offlinerl::BracConfig brac;
    brac.gamma = tasks.front().gamma;
    brac.tau = cfg.tau;
    brac.alpha_kl = cfg.alpha_kl;
    brac.learning_rate = cfg.learning_rate;
    st.rl = offlinerl::BracTrainer::create(state_dim, cfg.d_z, action_dim, cfg.actor_widths,
                                           cfg.critic_widths, action_scale, brac, rng_init);

    RunArtifacts art;
    art.out_dir = cfg.out_dir;
    art.config_digest = digest;
    art.run_label = cfg.run_label.empty() ? "run" : cfg.run_label;
    art.seed = cfg.seed;
    art.total_steps = cfg.total_steps;

    // --- behavior clone -------------------------------------------------------
    Rng rng_clone = Rng::derive(cfg.seed, 0xc107e);
    const auto clone_t0 = std::chrono::steady_clock::now();
    if (cfg.total_steps > 0 && cfg.behavior_clone_steps > 0) {
        offlinerl::CloneOptions clone_opts;
        clone_opts.steps = cfg.behavior_clone_steps;
        clone_opts.batch_size = cfg.rl_batch_size;
        clone_opts.learning_rate = std::max(cfg.learning_rate, 1e-3);
        st.rl.behavior = offlinerl::behavior_clone(train_data, st.enc_model,
                                                   st.encoder.snapshot(-1), st.rl.behavior.spec,
                                                   clone_opts, rng_clone);
        st.rl.behavior_opt =
            OptimizerState::for_params(st.rl.behavior.params, cfg.learning_rate);
    }
    art.clone_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - clone_t0).count();

    // --- training loop ----------------------------------------------------------
    Rng rng_tasks = Rng::derive(cfg.seed, 0x7a5c);
    Rng rng_ctx = Rng::derive(cfg.seed, 0xc0917e);
    Rng rng_rl = Rng::derive(cfg.seed, 0x51);
    Rng rng_noise = Rng::derive(cfg.seed, 0x4015e);

    std::vector<ReturnsRow> returns_rows;
    std::vector<AccuracyRow> accuracy_rows;
    taskenc::ShiftLog shift_log;
    core::EncoderSnapshot prev_snapshot = st.encoder.snapshot(-1);
    long encoder_updates = 0;
    double last_encoder_loss = 0.0;

    std::vector<int> task_batch(static_cast<std::size_t>(cfg.task_batch_size), 0);
    std::vector<int> all_train_ids(static_cast<std::size_t>(cfg.n_train_tasks));
    for (int i = 0; i < cfg.n_train_tasks; ++i) all_train_ids[static_cast<std::size_t>(i)] = i;

    auto eval_returns = [&](long train_step) {
        double mean_over_tasks = 0.0;
        const core::EncoderSnapshot snap{st.encoder.params.values, train_step};
        for (std::size_t i = 0; i < test_data.size(); ++i) {
            const auto& task = tasks[static_cast<std::size_t>(cfg.n_train_tasks) + i];
            const offlinerl::EvalResult res =
                offlinerl::evaluate_policy(task, st.enc_model, snap, st.rl.actor,
                                           eval_contexts[i], cfg.eval_episodes, cfg.seed);
            require_finite(res.mean_return, "mean_return");
            require_finite(res.std_return, "std_return");
            returns_rows.push_back(ReturnsRow{train_step, task.task_id, res.mean_return,
                                              res.std_return, eval_context_ids[i], cfg.seed});
            mean_over_tasks += res.mean_return;
        }
        mean_over_tasks /= static_cast<double>(test_data.size());
        art.final_mean_return = mean_over_tasks;
        return mean_over_tasks;
    };

    auto diagnostic_snapshot = [&](const std::exception& e) {
        const fs::path diag = fs::path(cfg.out_dir) / "diagnostic";
        fs::create_directories(diag);
        diffcompute::write_checkpoint((diag / "encoder.ckpt").string(), st.encoder.params,
                                      &st.enc_opt);
        diffcompute::write_checkpoint((diag / "actor.ckpt").string(), st.rl.actor.params,
                                      &st.rl.actor_opt);
        diffcompute::write_checkpoint((diag / "critic_q1.ckpt").string(), st.rl.critic.q1,
                                      &st.rl.q1_opt);
        diffcompute::write_checkpoint((diag / "critic_q2.ckpt").string(), st.rl.critic.q2,
                                      &st.rl.q2_opt);
        std::ofstream note(diag / "error.txt", std::ios::trunc);
        note << e.what() << "\n";
    };

    const auto wall_t0 = std::chrono::steady_clock::now();
    try {
        if (cfg.total_steps > 0) eval_returns(0);
        for (long step = 0; step < cfg.total_steps; ++step) {
            if (step % cfg.steps_per_iteration == 0) {
                // new outer iteration: resample the task batch and buffers
                rng_tasks.shuffle(all_train_ids);
                for (int j = 0; j < cfg.task_batch_size; ++j)
                    task_batch[static_cast<std::size_t>(j)] =
                        all_train_ids[static_cast<std::size_t>(j)];
            }
            // sample one trajectory context per task in the batch
            std::vector<core::Context> contexts;
            std::vector<int> labels;
            contexts.reserve(task_batch.size());
            for (int task_id : task_batch) {
                const auto& pool = train_trajs[static_cast<std::size_t>(task_id)];
                contexts.push_back(
                    core::Context::from_trajectory(pool[rng_ctx.index(pool.size())]));
                labels.push_back(task_id);
            }

            // task representations from the pre-update encoder, then the gated
            // update, then the detached copies feed the RL step
            std::vector<core::LatentZ> z_batch;
            z_batch.reserve(contexts.size());
            for (const auto& c : contexts)
                z_batch.push_back(taskenc::encode(st.enc_model, st.encoder.params, c));

            // linear decay to 10% settles the late-training classifier margin
            const double lr_scale =
                1.0 - 0.9 * static_cast<double>(step) / static_cast<double>(cfg.total_steps);
            st.enc_opt.learning_rate = cfg.encoder_learning_rate * lr_scale;
            st.head_opt.learning_rate = cfg.encoder_learning_rate * lr_scale;
            if (st.has_decoder) st.dec_opt.learning_rate = cfg.encoder_learning_rate * lr_scale;

            const bool updated = taskenc::gated_update(step, st.enc_cfg, [&] {
                last_encoder_loss = encoder_update(st, contexts, labels);
                if (st.enc_cfg.loss_kind == taskenc::LossKind::focal_metric ||
                    st.enc_cfg.loss_kind == taskenc::LossKind::reconstruction)
                    probe_head_update(st, contexts, labels);
            });
            if (updated) {
                ++encoder_updates;
                const core::EncoderSnapshot snap = st.encoder.snapshot(step);
                const double shift =
                    taskenc::representation_shift(st.enc_model, prev_snapshot, snap, probes);
                require_finite(shift, "shift_value");
                shift_log.add(step, shift, true);
                prev_snapshot = snap;
                const double acc = held_out_accuracy(st, heldout_contexts, heldout_labels);
                require_finite(last_encoder_loss, "encoder_loss");
                accuracy_rows.push_back(AccuracyRow{step, acc, last_encoder_loss});
                art.final_accuracy = acc;
            } else {
                shift_log.add(step, 0.0, false);
            }

            // RL batch over the sampled tasks' buffers with detached latents
            offlinerl::RLBatch batch;
            batch.transitions.reserve(static_cast<std::size_t>(cfg.rl_batch_size));
            batch.latents.reserve(static_cast<std::size_t>(cfg.rl_batch_size));
            for (int i = 0; i < cfg.rl_batch_size; ++i) {
                const std::size_t slot = rng_rl.index(task_batch.size());
                const auto& rows = train_rows[static_cast<std::size_t>(task_batch[slot])];
                batch.transitions.push_back(rows[rng_rl.index(rows.size())]);
                batch.latents.push_back(z_batch[slot]);
            }
            offlinerl::behavior_update(batch, st.rl);
            offlinerl::critic_update(batch, st.rl, rng_noise);
            offlinerl::actor_update(batch, st.rl, rng_noise);

            if (cfg.eval_interval > 0 &&
                ((step + 1) % cfg.eval_interval == 0 || step + 1 == cfg.total_steps))
                eval_returns(step + 1);
        }
    } catch (const std::exception& e) {
        diagnostic_snapshot(e);
        throw std::runtime_error(std::string("run_training aborted: ") + e.what() +
                                 " (diagnostic snapshot in " + cfg.out_dir + "/diagnostic)");
    }
    art.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - wall_t0).count();
    art.encoder_updates = encoder_updates;

    // --- invariants ------------------------------------------------------------
    const long expected_updates =
        cfg.total_steps == 0
            ? 0
            : (cfg.total_steps + cfg.update_frequency - 1) / cfg.update_frequency;
    if (encoder_updates != expected_updates)
        throw std::runtime_error("run_training: encoder update count " +
                                 std::to_string(encoder_updates) + " != ceil(T/f) = " +
                                 std::to_string(expected_updates));
    if (shift_log.update_count() != encoder_updates)
        throw std::runtime_error("run_training: shift log update count mismatch");

    // --- artifacts ---------------------------------------------------------------
    art.returns_csv = (fs::path(cfg.out_dir) / "returns.csv").string();
    art.accuracy_csv = (fs::path(cfg.out_dir) / "accuracy.csv").string();
    art.shift_csv = (fs::path(cfg.out_dir) / "shift.csv").string();
    art.config_snapshot = (fs::path(cfg.out_dir) / "config_snapshot.txt").string();
    write_returns_csv(art.returns_csv, returns_rows, digest);
    write_accuracy_csv(art.accuracy_csv, accuracy_rows, digest);
    shift_log.write_csv(art.shift_csv, digest);

    {
        std::ofstream snap(art.config_snapshot, std::ios::trunc);
        snap << cfg.canonical_text();
        snap << "out_dir=" << cfg.out_dir << "\n";
        snap << "data_dir=" << cfg.data_dir << "\n";
    }

    auto save = [&](const std::string& name, const diffcompute::ParameterVector& params,
                    const OptimizerState* opt) {
        const std::string path = (fs::path(cfg.out_dir) / (name + ".ckpt")).string();
        diffcompute::write_checkpoint(path, params, opt);
        art.checkpoints[name] = path;
    };
    save("encoder", st.encoder.params, &st.enc_opt);
    save("head", st.head.params, &st.head_opt);
    if (st.has_decoder) save("decoder", st.dec_params, &st.dec_opt);
    save("actor", st.rl.actor.params, &st.rl.actor_opt);
    save("behavior", st.rl.behavior.params, &st.rl.behavior_opt);
    save("critic_q1", st.rl.critic.q1, &st.rl.q1_opt);
    save("critic_q2", st.rl.critic.q2, &st.rl.q2_opt);
    save("critic_q1_target", st.rl.critic.q1_target, nullptr);
    save("critic_q2_target", st.rl.critic.q2_target, nullptr);

    const nlohmann::json manifest =
        artifacts_to_json(art, shift_log.mean_update_shift(), shift_log.max_shift(), cfg.data_dir,
                          envlab::family_name(cfg.family));
    std::ofstream mf(fs::path(cfg.out_dir) / "run.json", std::ios::trunc);
    mf << manifest.dump(2) << "\n";
    return art;
}

RunArtifacts load_artifacts(const std::string& out_dir) {
    std::ifstream mf(fs::path(out_dir) / "run.json");
    if (!mf) throw std::runtime_error("load_artifacts: no run.json in " + out_dir);
    nlohmann::json j;
    mf >> j;
    RunArtifacts art;
    art.out_dir = out_dir;
    art.config_digest = j.at("config_digest").get<std::string>();
    art.run_label = j.at("run_label").get<std::string>();
    art.seed = j.at("seed").get<std::uint64_t>();
    art.total_steps = j.at("total_steps").get<long>();
    art.encoder_updates = j.at("encoder_updates").get<long>();
    art.wall_seconds = j.at("wall_seconds").get<double>();
    art.clone_seconds = j.at("clone_seconds").get<double>();
    art.returns_csv = j.at("returns_csv").get<std::string>();
    art.accuracy_csv = j.at("accuracy_csv").get<std::string>();
    art.shift_csv = j.at("shift_csv").get<std::string>();
    art.config_snapshot = j.at("config_snapshot").get<std::string>();
    art.checkpoints = j.at("checkpoints").get<std::map<std::string, std::string>>();
    art.final_mean_return = j.at("final_mean_return").get<double>();
    art.final_accuracy = j.at("final_accuracy").get<double>();
    return art;
}

MetaTestResult run_meta_test(const RunArtifacts& artifacts, int n_episodes, std::uint64_t seed) {
    const TrainingConfig cfg = TrainingConfig::from_file(artifacts.config_snapshot);
    const std::vector<envlab::TaskSpec> tasks =
        load_tasks((fs::path(cfg.data_dir) / "tasks.txt").string());

    const diffcompute::Checkpoint enc_ck =
        diffcompute::read_checkpoint(artifacts.checkpoints.at("encoder"));
    const diffcompute::Checkpoint actor_ck =
        diffcompute::read_checkpoint(artifacts.checkpoints.at("actor"));

    // dims from the first test dataset
    const int n_total = cfg.n_train_tasks + cfg.n_test_tasks;
    offlinerl::GaussianPolicy actor;
    const double action_scale =
        cfg.family == envlab::TaskFamily::PointGoal2D ? envlab::kPointActionMax : 1.0;

    MetaTestResult result;
    Rng rng = Rng::derive(seed, 0x3e7a);
    std::vector<double> task_means;
    const taskenc::EncoderConfig enc_cfg = cfg.encoder_config();

    for (int id = cfg.n_train_tasks; id < n_total; ++id) {
        char name[64];
        std::snprintf(name, sizeof(name), "task_%03d.bin", id);
        const std::string path = (fs::path(cfg.data_dir) / name).string();
        if (!fs::exists(path))
            throw std::runtime_error("run_meta_test: task without dataset: " + path);
        const core::OfflineTaskDataset ds = core::read_dataset(path);
        const std::vector<core::Trajectory> trajs = ds.trajectories();
        const std::size_t ctx_idx = rng.index(trajs.size());

        if (actor.params.values.empty()) {
            const int state_dim = ds.state_dim();
            const int action_dim = ds.action_dim();
            actor.spec = offlinerl::GaussianPolicySpec::make(state_dim, cfg.d_z, action_dim,
                                                             cfg.actor_widths, action_scale);
            actor.params = actor_ck.params;
        }
        const auto& task = tasks[static_cast<std::size_t>(id)];
        const taskenc::EncoderModel enc_model =
            enc_cfg.encoder_model(ds.state_dim(), ds.action_dim());
        const core::EncoderSnapshot snap{enc_ck.params.values, artifacts.total_steps};
        const offlinerl::EvalResult res = offlinerl::evaluate_policy(
            task, enc_model, snap, actor, trajs[ctx_idx], n_episodes, seed);
        result.rows.push_back(MetaTestRow{task.task_id, res.mean_return, res.std_return,
                                          static_cast<long>(ctx_idx)});
        task_means.push_back(res.mean_return);
    }

    for (double m : task_means) result.aggregate_mean += m;
    result.aggregate_mean /= static_cast<double>(task_means.size());
    double var = 0.0;
    for (double m : task_means)
        var += (m - result.aggregate_mean) * (m - result.aggregate_mean);
    result.aggregate_std = std::sqrt(var / static_cast<double>(task_means.size()));

    result.csv_path = (fs::path(artifacts.out_dir) / "meta_test.csv").string();
    std::ofstream file(result.csv_path, std::ios::trunc);
    file << "# config_digest=" << artifacts.config_digest << "\n";
    file << "train_step,task_id,mean_return,std_return,context_id,seed\n";
    for (const auto& r : result.rows)
        file << artifacts.total_steps << "," << r.task_id << "," << fmt_double(r.mean_return)
             << "," << fmt_double(r.std_return) << "," << r.context_id << "," << seed << "\n";
    file << artifacts.total_steps << ",-1," << fmt_double(result.aggregate_mean) << ","
         << fmt_double(result.aggregate_std) << ",-1," << seed << "\n";
    return result;
}

AblationTable run_ablation_frequency(const TrainingConfig& base,
                                     const std::vector<int>& frequencies,
                                     const std::vector<std::uint64_t>& seeds) {
    for (int f : frequencies)
        if (f != 1 && f != 2 && f != 4 && f != 8)
            throw std::invalid_argument("run_ablation_frequency: frequencies must be in {1,2,4,8}");
    if (frequencies.empty() || seeds.empty())
        throw std::invalid_argument("run_ablation_frequency: empty grid");

    AblationTable table;
    for (int f : frequencies)
        for (std::uint64_t s : seeds) {
            TrainingConfig cfg = base;
            cfg.update_frequency = f;
            cfg.seed = s;
            cfg.run_label = "freq" + std::to_string(f);
            cfg.out_dir = (fs::path(base.out_dir) /
                           ("freq" + std::to_string(f) + "_seed" + std::to_string(s)))
                              .string();
            const RunArtifacts art = run_training(cfg);

            // shift statistics from the written log
            std::ifstream shift_file(art.shift_csv);
            std::string line;
            double mean_shift = 0.0;
            double max_shift = 0.0;
            long n_updates = 0;
            while (std::getline(shift_file, line)) {
                if (line.empty() || line[0] == '#' || line.rfind("step_index", 0) == 0) continue;
                std::stringstream ss(line);
                std::string field;
                std::getline(ss, field, ',');
                std::getline(ss, field, ',');
                const double shift = std::stod(field);
                std::getline(ss, field, ',');
                if (field == "1") {
                    mean_shift += shift;
                    max_shift = std::max(max_shift, shift);
                    ++n_updates;
                }
            }
            if (n_updates > 0) mean_shift /= static_cast<double>(n_updates);

            AblationRow row;
            row.frequency = f;
            row.seed = s;
            row.final_return = art.final_mean_return;
            row.encoder_updates = art.encoder_updates;
            row.wall_seconds = art.wall_seconds;
            row.mean_shift = mean_shift;
            row.max_shift = max_shift;
            row.finite = std::isfinite(art.final_mean_return);
            table.rows.push_back(row);
        }

    table.csv_path = (fs::path(base.out_dir) / "ablation.csv").string();
    fs::create_directories(base.out_dir);
    std::ofstream file(table.csv_path, std::ios::trunc);
    file << "frequency,seed,final_return,encoder_updates,wall_seconds,mean_shift,max_shift\n";
    for (const auto& r : table.rows)
        file << r.frequency << "," << r.seed << "," << fmt_double(r.final_return) << ","
             << r.encoder_updates << "," << fmt_double(r.wall_seconds) << ","
             << fmt_double(r.mean_shift) << "," << fmt_double(r.max_shift) << "\n";
    return table;
}

std::vector<WalltimeRow> report_walltime(const std::vector<RunArtifacts>& runs) {
    if (runs.size() < 2)
        throw std::invalid_argument("report_walltime: needs >= 2 runs to compare");
    for (const auto& r : runs)
        if (r.total_steps != runs.front().total_steps)
            throw std::invalid_argument("report_walltime: mismatched step budgets");
    std::vector<WalltimeRow> rows;
    for (const auto& r : runs) {
        WalltimeRow row;
        row.run_label = r.run_label;
        row.seed = r.seed;
        row.total_steps = r.total_steps;
        row.encoder_updates = r.encoder_updates;
        row.wall_seconds = r.wall_seconds;
        row.ratio_vs_first = runs.front().wall_seconds > 0.0
                                 ? r.wall_seconds / runs.front().wall_seconds
                                 : 1.0;
        rows.push_back(row);
    }
    return rows;
}

void write_walltime_csv(const std::string& path, const std::vector<WalltimeRow>& rows) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw std::runtime_error("write_walltime_csv: cannot open " + path);
    file << "run_label,seed,total_steps,encoder_updates,wall_seconds,ratio_vs_first\n";
    for (const auto& r : rows)
        file << r.run_label << "," << r.seed << "," << r.total_steps << "," << r.encoder_updates
             << "," << fmt_double(r.wall_seconds) << "," << fmt_double(r.ratio_vs_first) << "\n";
}

namespace {

using Series = std::map<long, double>;  // step -> value

std::map<std::string, Series> read_run_metrics(const RunArtifacts& art) {
    std::map<std::string, Series> metrics;
    // test_return: mean over task rows per step
    {
        std::ifstream file(art.returns_csv);
        std::string line;
        std::map<long, std::pair<double, long>> acc;
        while (std::getline(file, line)) {
            if (line.empty() || line[0] == '#' || line.rfind("train_step", 0) == 0) continue;
            std::stringstream ss(line);
            std::string f;
            std::getline(ss, f, ',');
            const long step = std::stol(f);
            std::getline(ss, f, ',');
            std::getline(ss, f, ',');
            acc[step].first += std::stod(f);
            acc[step].second += 1;
        }
        for (const auto& [step, pair] : acc)
            metrics["test_return"][step] = pair.first / static_cast<double>(pair.second);
    }
    {
        std::ifstream file(art.accuracy_csv);
        std::string line;
        while (std::getline(file, line)) {
            if (line.empty() || line[0] == '#' || line.rfind("train_step", 0) == 0) continue;
            std::stringstream ss(line);
            std::string f;
            std::getline(ss, f, ',');
            const long step = std::stol(f);
            std::getline(ss, f, ',');
            metrics["classifier_accuracy"][step] = std::stod(f);
        }
    }
    {
        std::ifstream file(art.shift_csv);
        std::string line;
        while (std::getline(file, line)) {
            if (line.empty() || line[0] == '#' || line.rfind("step_index", 0) == 0) continue;
            std::stringstream ss(line);
            std::string f;
            std::getline(ss, f, ',');
            const long step = std::stol(f);
            std::getline(ss, f, ',');
            const double shift = std::stod(f);
            std::getline(ss, f, ',');
            if (f == "1") metrics["representation_shift"][step] = shift;
        }
    }
    return metrics;
}

double sample_series(const Series& s, long step) {
    auto it = s.upper_bound(step);
    if (it == s.begin()) return s.begin()->second;  // before first point
    --it;
    return it->second;
}

}  // namespace

std::vector<PlotRow> emit_plot_data(const std::vector<std::string>& run_dirs) {
    if (run_dirs.empty()) throw std::invalid_argument("emit_plot_data: no runs given");

    struct SeedSeries {
        std::uint64_t seed;
        Series series;
    };
    // (run_label, metric) -> per-seed series
    std::map<std::pair<std::string, std::string>, std::vector<SeedSeries>> groups;
    for (const auto& dir : run_dirs) {
        const RunArtifacts art = load_artifacts(dir);
        for (auto& [metric, series] : read_run_metrics(art)) {
            if (series.empty()) continue;
            groups[{art.run_label, metric}].push_back(SeedSeries{art.seed, std::move(series)});
        }
    }

    std::vector<PlotRow> rows;
    bool warned = false;
    for (const auto& [key, seed_series] : groups) {
        // coarsest grid = the series with the fewest points
        std::size_t coarsest = 0;
        bool mismatch = false;
        for (std::size_t i = 0; i < seed_series.size(); ++i) {
            if (seed_series[i].series.size() < seed_series[coarsest].series.size()) coarsest = i;
            if (seed_series[i].series.size() != seed_series.front().series.size())
                mismatch = true;
        }
        if (mismatch && !warned) {
            std::cerr << "emit_plot_data: warning: inconsistent step grids, resampling to the "
                         "coarsest grid\n";
            warned = true;
        }
        for (const auto& [step, _] : seed_series[coarsest].series) {
            double mean = 0.0;
            for (const auto& ss : seed_series) mean += sample_series(ss.series, step);
            mean /= static_cast<double>(seed_series.size());
            double var = 0.0;
            for (const auto& ss : seed_series) {
                const double v = sample_series(ss.series, step);
                var += (v - mean) * (v - mean);
            }
            const double stddev = std::sqrt(var / static_cast<double>(seed_series.size()));
            for (const auto& ss : seed_series) {
                PlotRow row;
                row.step = step;
                row.metric = key.second;
                row.run_label = key.first;
                row.seed = ss.seed;
                row.value = sample_series(ss.series, step);
                row.mean = mean;
                row.std = stddev;
                row.n_seeds = static_cast<int>(seed_series.size());
                rows.push_back(std::move(row));
            }
        }
    }
    return rows;
}

void write_plot_csv(const std::string& path, const std::vector<PlotRow>& rows) {
    std::ofstream file(path, std::ios::trunc);
    if (!file) throw std::runtime_error("write_plot_csv: cannot open " + path);
    file << "step,metric,run_label,seed,value,mean,std,n_seeds\n";
    for (const auto& r : rows)
        file << r.step << "," << r.metric << "," << r.run_label << "," << r.seed << ","
             << fmt_double(r.value) << "," << fmt_double(r.mean) << "," << fmt_double(r.std)
             << "," << r.n_seeds << "\n";
}

}  // namespace comrl::harness
