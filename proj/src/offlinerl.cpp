#include "comrl/offlinerl.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace comrl::offlinerl {

using diffcompute::Mat;

namespace {

constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5 * ln(2*pi)
constexpr double kAtanhClamp = 1.0 - 1e-3;

std::vector<double> augmented_state(const std::vector<double>& state, const core::LatentZ& z) {
    std::vector<double> x;
    x.reserve(state.size() + z.values.size());
    x.insert(x.end(), state.begin(), state.end());
    x.insert(x.end(), z.values.begin(), z.values.end());
    return x;
}

double bound_log_std(double raw, double lo, double hi) {
    return lo + 0.5 * (hi - lo) * (std::tanh(raw) + 1.0);
}

double atanh_clamped(double a, double scale) {
    return std::atanh(std::clamp(a / scale, -kAtanhClamp, kAtanhClamp));
}

}  // namespace

GaussianPolicySpec GaussianPolicySpec::make(int state_dim, int d_z, int action_dim,
                                            const std::vector<int>& hidden, double action_scale,
                                            double log_std_min, double log_std_max) {
    GaussianPolicySpec spec;
    spec.net.input_dim = state_dim + d_z;
    spec.net.layer_widths = hidden;
    spec.net.layer_widths.push_back(2 * action_dim);
    spec.net.activation = diffcompute::Activation::relu;
    spec.net.output_transform = diffcompute::OutputTransform::identity;
    spec.action_dim = action_dim;
    spec.action_scale = action_scale;
    spec.log_std_min = log_std_min;
    spec.log_std_max = log_std_max;
    return spec;
}

GaussianMoments policy_moments(const GaussianPolicy& policy, const std::vector<double>& state,
                               const core::LatentZ& z) {
    const std::vector<double> out =
        diffcompute::forward(policy.spec.net, policy.params, augmented_state(state, z));
    const int da = policy.spec.action_dim;
    GaussianMoments m;
    m.mean.assign(out.begin(), out.begin() + da);
    m.log_std.resize(static_cast<std::size_t>(da));
    for (int i = 0; i < da; ++i)
        m.log_std[static_cast<std::size_t>(i)] = bound_log_std(
            out[static_cast<std::size_t>(da + i)], policy.spec.log_std_min, policy.spec.log_std_max);
    return m;
}

std::vector<double> policy_mean_action(const GaussianPolicy& policy,
                                       const std::vector<double>& state, const core::LatentZ& z) {
    GaussianMoments m = policy_moments(policy, state, z);
    std::vector<double> a(m.mean.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        a[i] = policy.spec.action_scale * std::tanh(m.mean[i]);
    return a;
}

double gaussian_kl(const GaussianMoments& p, const GaussianMoments& q) {
    if (p.mean.size() != q.mean.size())
        throw std::invalid_argument("gaussian_kl: dimension mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.mean.size(); ++i) {
        const double var_p = std::exp(2.0 * p.log_std[i]);
        const double var_q = std::exp(2.0 * q.log_std[i]);
        const double dmu = p.mean[i] - q.mean[i];
        kl += (q.log_std[i] - p.log_std[i]) + (var_p + dmu * dmu) / (2.0 * var_q) - 0.5;
    }
    return kl;
}

TwinCritic TwinCritic::create(int state_dim, int d_z, int action_dim,
                              const std::vector<int>& hidden, Rng& rng) {
    TwinCritic critic;
    critic.spec.input_dim = state_dim + d_z + action_dim;
    critic.spec.layer_widths = hidden;
    critic.spec.layer_widths.push_back(1);
    critic.spec.activation = diffcompute::Activation::relu;
    critic.spec.output_transform = diffcompute::OutputTransform::identity;
    critic.q1 = diffcompute::init_params(critic.spec, rng);
    critic.q2 = diffcompute::init_params(critic.spec, rng);
    critic.q1_target = critic.q1;
    critic.q2_target = critic.q2;
    return critic;
}

double TwinCritic::q_value(const ParameterVector& q, const std::vector<double>& state,
                           const core::LatentZ& z, const std::vector<double>& action) const {
    std::vector<double> x = augmented_state(state, z);
    x.insert(x.end(), action.begin(), action.end());
    return diffcompute::forward(spec, q, x)[0];
}

double TwinCritic::min_target(const std::vector<double>& state, const core::LatentZ& z,
                              const std::vector<double>& action) const {
    return std::min(q_value(q1_target, state, z, action), q_value(q2_target, state, z, action));
}

void RLBatch::validate() const {
    if (transitions.empty()) throw std::invalid_argument("RLBatch: empty batch");
    if (transitions.size() != latents.size())
        throw std::invalid_argument("RLBatch: latent count must match transition count");
}

BracTrainer BracTrainer::create(int state_dim, int d_z, int action_dim,
                                const std::vector<int>& actor_hidden,
                                const std::vector<int>& critic_hidden, double action_scale,
                                const BracConfig& cfg, Rng& rng) {
    BracTrainer t;
    t.cfg = cfg;
    t.actor.spec = GaussianPolicySpec::make(state_dim, d_z, action_dim, actor_hidden, action_scale);
    t.actor.params = diffcompute::init_params(t.actor.spec.net, rng);
    // behavior variance is floored at 1e-3 through its log-std lower bound
    t.behavior.spec = GaussianPolicySpec::make(state_dim, d_z, action_dim, actor_hidden,
                                               action_scale, 0.5 * std::log(1e-3), 2.0);
    t.behavior.params = diffcompute::init_params(t.behavior.spec.net, rng);
    t.critic = TwinCritic::create(state_dim, d_z, action_dim, critic_hidden, rng);
    t.actor_opt = OptimizerState::for_params(t.actor.params, cfg.learning_rate);
    t.behavior_opt = OptimizerState::for_params(t.behavior.params, cfg.learning_rate);
    t.q1_opt = OptimizerState::for_params(t.critic.q1, cfg.learning_rate);
    t.q2_opt = OptimizerState::for_params(t.critic.q2, cfg.learning_rate);
    return t;
}

std::vector<double> compute_critic_targets(const RLBatch& batch, const BracTrainer& trainer,
                                           Rng& rng) {
    batch.validate();
    std::vector<double> targets(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto& tr = batch.transitions[i];
        const auto& z = batch.latents[i];
        double y = tr.reward;
        if (!tr.done) {
            const GaussianMoments pi = policy_moments(trainer.actor, tr.next_state, z);
            std::vector<double> a(pi.mean.size());
            for (std::size_t d = 0; d < a.size(); ++d)
                a[d] = trainer.actor.spec.action_scale *
                       std::tanh(pi.mean[d] + std::exp(pi.log_std[d]) * rng.normal());
            const double q_min = trainer.critic.min_target(tr.next_state, z, a);
            const GaussianMoments pi_b = policy_moments(trainer.behavior, tr.next_state, z);
            const double kl = gaussian_kl(pi, pi_b);
            y += trainer.cfg.gamma * (q_min - trainer.cfg.alpha_kl * kl);
        }
        if (!std::isfinite(y))
            throw std::runtime_error("compute_critic_targets: non-finite TD target");
        targets[i] = y;
    }
    return targets;
}

namespace {

Mat batch_sza(const RLBatch& batch) {
    const auto& t0 = batch.transitions.front();
    const int sd = static_cast<int>(t0.state.size());
    const int dz = batch.latents.front().dim();
    const int ad = static_cast<int>(t0.action.size());
    Mat x(static_cast<int>(batch.size()), sd + dz + ad);
    for (int r = 0; r < x.rows; ++r) {
        const auto& tr = batch.transitions[static_cast<std::size_t>(r)];
        const auto& z = batch.latents[static_cast<std::size_t>(r)];
        int c = 0;
        for (double v : tr.state) x.at(r, c++) = v;
        for (double v : z.values) x.at(r, c++) = v;
        for (double v : tr.action) x.at(r, c++) = v;
    }
    return x;
}

Mat batch_sz(const RLBatch& batch) {
    const auto& t0 = batch.transitions.front();
    const int sd = static_cast<int>(t0.state.size());
    const int dz = batch.latents.front().dim();
    Mat x(static_cast<int>(batch.size()), sd + dz);
    for (int r = 0; r < x.rows; ++r) {
        const auto& tr = batch.transitions[static_cast<std::size_t>(r)];
        const auto& z = batch.latents[static_cast<std::size_t>(r)];
        int c = 0;
        for (double v : tr.state) x.at(r, c++) = v;
        for (double v : z.values) x.at(r, c++) = v;
    }
    return x;
}

// Bounded log-std as tape nodes from the raw policy-net output columns.
Tape::Node bounded_log_std_node(Tape& tape, Tape::Node raw, double lo, double hi) {
    return tape.add_scalar(tape.scale(tape.tanh_(raw), 0.5 * (hi - lo)), lo + 0.5 * (hi - lo));
}

}  // namespace

Tape::Node critic_loss_node(Tape& tape, const ApproximatorSpec& critic_spec, Tape::Node q_params,
                            const RLBatch& batch, const std::vector<double>& targets) {
    batch.validate();
    if (targets.size() != batch.size())
        throw std::invalid_argument("critic_loss_node: target count mismatch");
    Tape::Node x = tape.leaf(batch_sza(batch));
    Tape::Node q = diffcompute::mlp_forward(tape, critic_spec, q_params, x);
    Mat y(static_cast<int>(targets.size()), 1, targets);
    return tape.mse_against(q, y);
}

double critic_update(const RLBatch& batch, BracTrainer& trainer, Rng& rng) {
    const std::vector<double> targets = compute_critic_targets(batch, trainer, rng);
    Tape tape;
    Tape::Node p1 = tape.param(trainer.critic.q1);
    Tape::Node p2 = tape.param(trainer.critic.q2);
    Tape::Node loss = tape.add(critic_loss_node(tape, trainer.critic.spec, p1, batch, targets),
                               critic_loss_node(tape, trainer.critic.spec, p2, batch, targets));
    tape.backward(loss);
    diffcompute::adam_step(trainer.critic.q1, tape.grad(p1).v, trainer.q1_opt);
    diffcompute::adam_step(trainer.critic.q2, tape.grad(p2).v, trainer.q2_opt);

    const double tau = trainer.cfg.tau;
    for (std::size_t i = 0; i < trainer.critic.q1.values.size(); ++i) {
        trainer.critic.q1_target.values[i] =
            (1.0 - tau) * trainer.critic.q1_target.values[i] + tau * trainer.critic.q1.values[i];
        trainer.critic.q2_target.values[i] =
            (1.0 - tau) * trainer.critic.q2_target.values[i] + tau * trainer.critic.q2.values[i];
    }
    return tape.scalar(loss);
}

Tape::Node actor_loss_node(Tape& tape, const GaussianPolicySpec& actor_spec,
                           Tape::Node actor_params, const TwinCritic& critic,
                           const GaussianPolicy& behavior, const RLBatch& batch,
                           const Mat& noise, double alpha_kl) {
    batch.validate();
    const int b = static_cast<int>(batch.size());
    const int da = actor_spec.action_dim;
    if (noise.rows != b || noise.cols != da)
        throw std::invalid_argument("actor_loss_node: noise shape mismatch");

    // behavior moments are constants in the actor objective
    Mat mu_b(b, da);
    Mat log_std_b(b, da);
    Mat inv_two_var_b(b, da);
    for (int r = 0; r < b; ++r) {
        const GaussianMoments mb =
            policy_moments(behavior, batch.transitions[static_cast<std::size_t>(r)].state,
                           batch.latents[static_cast<std::size_t>(r)]);
        for (int d = 0; d < da; ++d) {
            mu_b.at(r, d) = mb.mean[static_cast<std::size_t>(d)];
            log_std_b.at(r, d) = mb.log_std[static_cast<std::size_t>(d)];
            inv_two_var_b.at(r, d) =
                1.0 / (2.0 * std::exp(2.0 * mb.log_std[static_cast<std::size_t>(d)]));
        }
    }

    Tape::Node sz = tape.leaf(batch_sz(batch));
    Tape::Node out = diffcompute::mlp_forward(tape, actor_spec.net, actor_params, sz);
    Tape::Node mu = tape.slice_cols(out, 0, da);
    Tape::Node log_std =
        bounded_log_std_node(tape, tape.slice_cols(out, da, 2 * da), actor_spec.log_std_min,
                             actor_spec.log_std_max);
    Tape::Node sigma = tape.exp_(log_std);
    Tape::Node pre = tape.add(mu, tape.mul(sigma, tape.leaf(noise)));
    Tape::Node action = tape.scale(tape.tanh_(pre), actor_spec.action_scale);

    Tape::Node q_in = tape.concat_cols(sz, action);
    Tape::Node q1 = diffcompute::mlp_forward(tape, critic.spec, tape.param(critic.q1), q_in);
    Tape::Node q2 = diffcompute::mlp_forward(tape, critic.spec, tape.param(critic.q2), q_in);
    Tape::Node q_min = tape.min_(q1, q2);

    // KL(pi || pi_b) with diagonal Gaussians, summed over action dims
    Tape::Node lsb = tape.leaf(std::move(log_std_b));
    Tape::Node dmu = tape.sub(mu, tape.leaf(std::move(mu_b)));
    Tape::Node var_p = tape.exp_(tape.scale(log_std, 2.0));
    Tape::Node quad = tape.mul(tape.add(var_p, tape.square(dmu)), tape.leaf(std::move(inv_two_var_b)));
    Tape::Node kl_elems = tape.add_scalar(tape.add(tape.sub(lsb, log_std), quad), -0.5);
    Tape::Node kl = tape.row_sum(kl_elems);

    return tape.mean_all(tape.add(tape.scale(q_min, -1.0), tape.scale(kl, alpha_kl)));
}

double actor_update(const RLBatch& batch, BracTrainer& trainer, Rng& rng) {
    const int b = static_cast<int>(batch.size());
    const int da = trainer.actor.spec.action_dim;
    Mat noise(b, da);
    for (double& v : noise.v) v = rng.normal();

    Tape tape;
    Tape::Node p = tape.param(trainer.actor.params);
    Tape::Node loss = actor_loss_node(tape, trainer.actor.spec, p, trainer.critic,
                                      trainer.behavior, batch, noise, trainer.cfg.alpha_kl);
    tape.backward(loss);
    diffcompute::adam_step(trainer.actor.params, tape.grad(p).v, trainer.actor_opt);
    return tape.scalar(loss);
}

Tape::Node behavior_nll_node(Tape& tape, const GaussianPolicySpec& behavior_spec,
                             Tape::Node behavior_params, const RLBatch& batch) {
    batch.validate();
    const int b = static_cast<int>(batch.size());
    const int da = behavior_spec.action_dim;

    Mat u(b, da);  // dataset actions mapped to pre-squash space
    for (int r = 0; r < b; ++r)
        for (int d = 0; d < da; ++d)
            u.at(r, d) = atanh_clamped(
                batch.transitions[static_cast<std::size_t>(r)].action[static_cast<std::size_t>(d)],
                behavior_spec.action_scale);

    Tape::Node sz = tape.leaf(batch_sz(batch));
    Tape::Node out = diffcompute::mlp_forward(tape, behavior_spec.net, behavior_params, sz);
    Tape::Node mu = tape.slice_cols(out, 0, da);
    Tape::Node log_std = bounded_log_std_node(tape, tape.slice_cols(out, da, 2 * da),
                                              behavior_spec.log_std_min, behavior_spec.log_std_max);
    Tape::Node du = tape.sub(tape.leaf(std::move(u)), mu);
    Tape::Node inv_var = tape.exp_(tape.scale(log_std, -2.0));
    Tape::Node quad = tape.scale(tape.mul(tape.square(du), inv_var), 0.5);
    Tape::Node nll_elems = tape.add_scalar(tape.add(log_std, quad), kHalfLog2Pi);
    return tape.mean_all(tape.row_sum(nll_elems));
}

double behavior_update(const RLBatch& batch, BracTrainer& trainer) {
    Tape tape;
    Tape::Node p = tape.param(trainer.behavior.params);
    Tape::Node loss = behavior_nll_node(tape, trainer.behavior.spec, p, batch);
    tape.backward(loss);
    diffcompute::adam_step(trainer.behavior.params, tape.grad(p).v, trainer.behavior_opt);
    return tape.scalar(loss);
}

GaussianPolicy behavior_clone(const std::vector<core::OfflineTaskDataset>& datasets,
                              const taskenc::EncoderModel& encoder_model,
                              const core::EncoderSnapshot& encoder_snapshot,
                              const GaussianPolicySpec& behavior_spec, const CloneOptions& options,
                              Rng& rng) {
    if (datasets.empty()) throw std::invalid_argument("behavior_clone: no datasets");

    GaussianPolicy behavior;
    behavior.spec = behavior_spec;
    behavior.params = diffcompute::init_params(behavior_spec.net, rng);
    OptimizerState opt = OptimizerState::for_params(behavior.params, options.learning_rate);

    // fixed per-task latent tags from the snapshot encoder
    std::vector<core::LatentZ> task_z;
    task_z.reserve(datasets.size());
    for (const auto& ds : datasets) {
        const auto trajectories = ds.trajectories();
        if (trajectories.empty()) throw std::invalid_argument("behavior_clone: empty dataset");
        task_z.push_back(taskenc::encode(encoder_model, encoder_snapshot,
                                         core::Context::from_trajectory(trajectories.front())));
    }

    BracTrainer shim;  // reuse behavior_update via a local trainer view
    shim.behavior = behavior;
    shim.behavior_opt = opt;

    for (long step = 0; step < options.steps; ++step) {
        RLBatch batch;
        batch.transitions.reserve(static_cast<std::size_t>(options.batch_size));
        batch.latents.reserve(static_cast<std::size_t>(options.batch_size));
        for (int i = 0; i < options.batch_size; ++i) {
            const std::size_t task = rng.index(datasets.size());
            const std::size_t row = rng.index(datasets[task].transitions.size());
            batch.transitions.push_back(datasets[task].transitions[row]);
            batch.latents.push_back(task_z[task]);
        }
        behavior_update(batch, shim);
    }
    return shim.behavior;
}

EvalResult evaluate_policy(const envlab::TaskSpec& task,
                           const taskenc::EncoderModel& encoder_model,
                           const core::EncoderSnapshot& encoder_snapshot,
                           const GaussianPolicy& actor, const core::Trajectory& context,
                           int n_episodes, std::uint64_t seed) {
    if (n_episodes < 1) throw std::invalid_argument("evaluate_policy: n_episodes must be >= 1");
    for (const auto& tr : context.transitions)
        if (tr.task_id != task.task_id)
            throw std::invalid_argument("evaluate_policy: context does not belong to the task");

    const core::LatentZ z =
        taskenc::encode(encoder_model, encoder_snapshot, core::Context::from_trajectory(context));

    Rng rng = Rng::derive(seed, 0xe7a1ULL + static_cast<std::uint64_t>(task.task_id));
    (void)rng;  // environments here are deterministic; stream reserved for stochastic ones

    std::vector<double> returns(static_cast<std::size_t>(n_episodes), 0.0);
    for (int ep = 0; ep < n_episodes; ++ep) {
        std::vector<double> state = task.initial_state();
        double total = 0.0;
        for (int t = 0; t < task.horizon; ++t) {
            const std::vector<double> action = policy_mean_action(actor, state, z);
            const envlab::StepResult step = envlab::env_step(task, state, action, t);
            total += step.reward;
            state = step.next_state;
            if (step.done) break;
        }
        returns[static_cast<std::size_t>(ep)] = total;
    }

    EvalResult out;
    out.n_episodes = n_episodes;
    for (double r : returns) out.mean_return += r;
    out.mean_return /= n_episodes;
    double var = 0.0;
    for (double r : returns) var += (r - out.mean_return) * (r - out.mean_return);
    out.std_return = n_episodes > 1 ? std::sqrt(var / n_episodes) : 0.0;
    return out;
}

}  // namespace comrl::offlinerl
