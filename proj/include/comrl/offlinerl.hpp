#pragma once

#include <vector>

#include "comrl/core.hpp"
#include "comrl/diffcompute.hpp"
#include "comrl/envlab.hpp"
#include "comrl/rng.hpp"
#include "comrl/taskenc.hpp"

namespace comrl::offlinerl {

using diffcompute::ApproximatorSpec;
using diffcompute::OptimizerState;
using diffcompute::ParameterVector;
using diffcompute::Tape;

// Tanh-squashed Gaussian over actions. The net maps [s, z] to
// (pre-squash mean, raw log-std); log-std is tanh-bounded to
// [log_std_min, log_std_max]. Executed actions are action_scale * tanh(u).
struct GaussianPolicySpec {
    ApproximatorSpec net;
    int action_dim = 0;
    double action_scale = 1.0;
    double log_std_min = -5.0;
    double log_std_max = 2.0;

    static GaussianPolicySpec make(int state_dim, int d_z, int action_dim,
                                   const std::vector<int>& hidden, double action_scale,
                                   double log_std_min = -5.0, double log_std_max = 2.0);
};

struct GaussianPolicy {
    GaussianPolicySpec spec;
    ParameterVector params;
};

struct GaussianMoments {
    std::vector<double> mean;     // pre-squash
    std::vector<double> log_std;  // bounded
};

// Pre-squash moments at an augmented state [s, z].
GaussianMoments policy_moments(const GaussianPolicy& policy, const std::vector<double>& state,
                               const core::LatentZ& z);

// Deterministic evaluation action: action_scale * tanh(mean).
std::vector<double> policy_mean_action(const GaussianPolicy& policy,
                                       const std::vector<double>& state, const core::LatentZ& z);

// Closed-form KL(p || q) between diagonal Gaussians (shared tanh squash cancels).
double gaussian_kl(const GaussianMoments& p, const GaussianMoments& q);

// Twin Q-networks with Polyak-averaged targets; input [s, z, a].
struct TwinCritic {
    ApproximatorSpec spec;
    ParameterVector q1, q2;
    ParameterVector q1_target, q2_target;

    static TwinCritic create(int state_dim, int d_z, int action_dim,
                             const std::vector<int>& hidden, Rng& rng);
    double q_value(const ParameterVector& q, const std::vector<double>& state,
                   const core::LatentZ& z, const std::vector<double>& action) const;
    double min_target(const std::vector<double>& state, const core::LatentZ& z,
                      const std::vector<double>& action) const;
};

// Transitions with detached task latents, one per row.
struct RLBatch {
    std::vector<core::TransitionRecord> transitions;
    std::vector<core::LatentZ> latents;

    std::size_t size() const { return transitions.size(); }
    void validate() const;
};

struct BracConfig {
    double gamma = 0.99;
    double tau = 0.005;
    double alpha_kl = 1.0;
    double learning_rate = 3e-4;
};

// Mutable training state for one run: actor, twin critics, cloned behavior
// policy and their optimizer states.
struct BracTrainer {
    GaussianPolicy actor;
    GaussianPolicy behavior;
    TwinCritic critic;
    OptimizerState actor_opt;
    OptimizerState behavior_opt;
    OptimizerState q1_opt;
    OptimizerState q2_opt;
    BracConfig cfg;

    static BracTrainer create(int state_dim, int d_z, int action_dim,
                              const std::vector<int>& actor_hidden,
                              const std::vector<int>& critic_hidden, double action_scale,
                              const BracConfig& cfg, Rng& rng);
};

// TD targets y = r + gamma (1-done) [min(Q1', Q2')(s', a'~pi, z) - alpha_kl KL(s', z)].
// Throws on non-finite targets.
std::vector<double> compute_critic_targets(const RLBatch& batch, const BracTrainer& trainer,
                                           Rng& rng);

// MSE of one critic head against fixed targets (for gradient checks).
Tape::Node critic_loss_node(Tape& tape, const ApproximatorSpec& critic_spec,
                            Tape::Node q_params, const RLBatch& batch,
                            const std::vector<double>& targets);

// One twin-critic regression step plus Polyak target update; returns the loss.
double critic_update(const RLBatch& batch, BracTrainer& trainer, Rng& rng);

// Actor loss: mean(-min(Q1,Q2)(s, a(theta), z) + alpha_kl KL(pi || pi_b)),
// reparameterized with fixed per-row noise.
Tape::Node actor_loss_node(Tape& tape, const GaussianPolicySpec& actor_spec,
                           Tape::Node actor_params, const TwinCritic& critic,
                           const GaussianPolicy& behavior, const RLBatch& batch,
                           const diffcompute::Mat& noise, double alpha_kl);

double actor_update(const RLBatch& batch, BracTrainer& trainer, Rng& rng);

// Negative log-likelihood of batch actions (mapped to pre-squash space)
// under the behavior Gaussian.
Tape::Node behavior_nll_node(Tape& tape, const GaussianPolicySpec& behavior_spec,
                             Tape::Node behavior_params, const RLBatch& batch);

double behavior_update(const RLBatch& batch, BracTrainer& trainer);

struct CloneOptions {
    long steps = 1000;
    int batch_size = 256;
    double learning_rate = 1e-3;
};

// Fits the Gaussian behavior policy to dataset actions given (s, z), with z
// encoded from a fixed per-task context under the given snapshot.
GaussianPolicy behavior_clone(const std::vector<core::OfflineTaskDataset>& datasets,
                              const taskenc::EncoderModel& encoder_model,
                              const core::EncoderSnapshot& encoder_snapshot,
                              const GaussianPolicySpec& behavior_spec, const CloneOptions& options,
                              Rng& rng);

struct EvalResult {
    double mean_return = 0.0;
    double std_return = 0.0;
    int n_episodes = 0;
};

// Encodes the context once, then rolls the deterministic mean policy in the
// true environment for n_episodes; returns undiscounted episode returns.
// Throws if the context's transitions belong to a different task.
EvalResult evaluate_policy(const envlab::TaskSpec& task,
                           const taskenc::EncoderModel& encoder_model,
                           const core::EncoderSnapshot& encoder_snapshot,
                           const GaussianPolicy& actor, const core::Trajectory& context,
                           int n_episodes, std::uint64_t seed);

}  // namespace comrl::offlinerl
