#pragma once

#include <string>
#include <vector>

#include "comrl/core.hpp"
#include "comrl/rng.hpp"

namespace comrl::envlab {

enum class TaskFamily { PointGoal2D, GridChainDir };

std::string family_name(TaskFamily family);
TaskFamily family_from_name(const std::string& name);

// PointGoal2D constants. A point mass on the plane integrates clipped
// actions; the goal sits on the unit semicircle.
inline constexpr double kPointDt = 0.1;
inline constexpr double kPointActionMax = 1.0;
inline constexpr int kPointHorizon = 20;
inline constexpr double kPointGamma = 0.99;

// GridChainDir constants: a 5-state deterministic chain with 2 actions.
// Reward +1 for the task's direction, -0.1 otherwise.
inline constexpr int kChainStates = 5;
inline constexpr int kChainActions = 2;
inline constexpr int kChainStart = 2;
inline constexpr int kChainHorizon = 10;
inline constexpr double kChainGamma = 0.9;
inline constexpr double kChainRewardMove = 1.0;
inline constexpr double kChainRewardOther = -0.1;

struct TaskSpec {
    TaskFamily family = TaskFamily::PointGoal2D;
    int task_id = 0;
    // PointGoal2D: the 2-d goal. GridChainDir: [-1] for left, [+1] for right.
    std::vector<double> goal_or_direction;
    int horizon = kPointHorizon;
    double gamma = kPointGamma;

    int state_dim() const;
    int action_dim() const;
    std::vector<double> initial_state() const;
};

// Exact finite MDP: P[s][a][s'], R[s][a], initial distribution, discount.
struct TabularMDP {
    int n_states = 0;
    int n_actions = 0;
    std::vector<std::vector<std::vector<double>>> transition;  // [s][a][s']
    std::vector<std::vector<double>> reward;                   // [s][a]
    std::vector<double> initial;                               // rho0
    double gamma = 0.9;

    double reward_bound() const;  // max |R|
    void validate() const;        // rows sum to 1, rho0 sums to 1
};

enum class BehaviorKind { noisy_expert, uniform_random, mixture };

struct BehaviorPolicySpec {
    BehaviorKind kind = BehaviorKind::noisy_expert;
    double noise_scale = 0.0;
    double mixture_weight = 0.5;  // expert-episode share; used only by mixture
};

// Samples n_train + n_test tasks; ids 0..n_train-1 are training tasks.
// Deterministic for a fixed seed.
std::vector<TaskSpec> make_task_family(TaskFamily family, int n_train, int n_test,
                                       std::uint64_t seed);

struct StepResult {
    std::vector<double> next_state;
    double reward = 0.0;
    bool done = false;
};

// One environment transition. step_index is the 0-based step within the
// episode; done triggers when the episode reaches the task horizon.
// GridChainDir interprets the action vector by argmax.
StepResult env_step(const TaskSpec& task, const std::vector<double>& state,
                    const std::vector<double>& action, int step_index = 0);

// The analytic goal-seeking action (pre-noise, pre-clip for PointGoal2D;
// one-hot direction for GridChainDir).
std::vector<double> expert_action(const TaskSpec& task, const std::vector<double>& state);

// Rolls the behavior policy for n_transitions steps composed of complete
// episodes; n_transitions must be a positive multiple of the horizon.
core::OfflineTaskDataset rollout_behavior(const TaskSpec& task, const BehaviorPolicySpec& policy,
                                          int n_transitions, std::uint64_t seed);

// Exact tabular model for GridChainDir tasks; throws for other families.
TabularMDP tabular_mdp_for(const TaskSpec& task);

}  // namespace comrl::envlab
