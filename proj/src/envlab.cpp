#include "comrl/envlab.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace comrl::envlab {

std::string family_name(TaskFamily family) {
    switch (family) {
        case TaskFamily::PointGoal2D: return "PointGoal2D";
        case TaskFamily::GridChainDir: return "GridChainDir";
    }
    throw std::invalid_argument("family_name: unknown family");
}

TaskFamily family_from_name(const std::string& name) {
    if (name == "PointGoal2D") return TaskFamily::PointGoal2D;
    if (name == "GridChainDir") return TaskFamily::GridChainDir;
    throw std::invalid_argument("family_from_name: unknown family '" + name + "'");
}

int TaskSpec::state_dim() const {
    return family == TaskFamily::PointGoal2D ? 2 : 1;
}

int TaskSpec::action_dim() const {
    return family == TaskFamily::PointGoal2D ? 2 : kChainActions;
}

std::vector<double> TaskSpec::initial_state() const {
    if (family == TaskFamily::PointGoal2D) return {0.0, 0.0};
    return {static_cast<double>(kChainStart)};
}

double TabularMDP::reward_bound() const {
    double bound = 0.0;
    for (const auto& row : reward)
        for (double r : row) bound = std::max(bound, std::abs(r));
    return bound;
}

void TabularMDP::validate() const {
    if (static_cast<int>(transition.size()) != n_states ||
        static_cast<int>(reward.size()) != n_states ||
        static_cast<int>(initial.size()) != n_states)
        throw std::invalid_argument("TabularMDP: table sizes do not match n_states");
    double rho_sum = 0.0;
    for (double p : initial) rho_sum += p;
    if (std::abs(rho_sum - 1.0) > 1e-12)
        throw std::invalid_argument("TabularMDP: initial distribution does not sum to 1");
    for (int s = 0; s < n_states; ++s) {
        if (static_cast<int>(transition[s].size()) != n_actions ||
            static_cast<int>(reward[s].size()) != n_actions)
            throw std::invalid_argument("TabularMDP: table sizes do not match n_actions");
        for (int a = 0; a < n_actions; ++a) {
            double p_sum = 0.0;
            for (double p : transition[s][a]) p_sum += p;
            if (std::abs(p_sum - 1.0) > 1e-12)
                throw std::invalid_argument("TabularMDP: P row does not sum to 1");
        }
    }
}

std::vector<TaskSpec> make_task_family(TaskFamily family, int n_train, int n_test,
                                       std::uint64_t seed) {
    if (n_train < 1 || n_test < 1)
        throw std::invalid_argument("make_task_family: n_train and n_test must be >= 1");
    const int total = n_train + n_test;
    std::vector<TaskSpec> tasks;
    tasks.reserve(static_cast<std::size_t>(total));
    Rng rng = Rng::derive(seed, 0x7461736bULL);

    if (family == TaskFamily::PointGoal2D) {
        const double pi = 3.14159265358979323846;
        for (int i = 0; i < total; ++i) {
            const double angle = rng.uniform(0.0, pi);
            TaskSpec t;
            t.family = family;
            t.task_id = i;
            t.goal_or_direction = {std::cos(angle), std::sin(angle)};
            t.horizon = kPointHorizon;
            t.gamma = kPointGamma;
            tasks.push_back(std::move(t));
        }
        return tasks;
    }

    // GridChainDir has a two-point task distribution. Independent draws can
    // collapse to a single direction, which makes task identity vacuous, so
    // directions are assigned balanced within the train and test halves and
    // shuffled by the seed.
    auto balanced_directions = [&rng](int n) {
        std::vector<double> dirs(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) dirs[static_cast<std::size_t>(i)] = (i % 2 == 0) ? 1.0 : -1.0;
        rng.shuffle(dirs);
        return dirs;
    };
    const std::vector<double> train_dirs = balanced_directions(n_train);
    const std::vector<double> test_dirs = balanced_directions(n_test);
    for (int i = 0; i < total; ++i) {
        TaskSpec t;
        t.family = family;
        t.task_id = i;
        const double dir = i < n_train ? train_dirs[static_cast<std::size_t>(i)]
                                       : test_dirs[static_cast<std::size_t>(i - n_train)];
        t.goal_or_direction = {dir};
        t.horizon = kChainHorizon;
        t.gamma = kChainGamma;
        tasks.push_back(std::move(t));
    }
    return tasks;
}

namespace {

std::vector<double> clip_box(std::vector<double> v, double bound) {
    for (double& x : v) x = std::clamp(x, -bound, bound);
    return v;
}

int argmax_index(const std::vector<double>& v) {
    int best = 0;
    for (int i = 1; i < static_cast<int>(v.size()); ++i)
        if (v[static_cast<std::size_t>(i)] > v[static_cast<std::size_t>(best)]) best = i;
    return best;
}

}  // namespace

StepResult env_step(const TaskSpec& task, const std::vector<double>& state,
                    const std::vector<double>& action, int step_index) {
    if (static_cast<int>(state.size()) != task.state_dim() ||
        static_cast<int>(action.size()) != task.action_dim())
        throw std::invalid_argument("env_step: dimension mismatch");

    StepResult out;
    out.done = step_index + 1 >= task.horizon;

    if (task.family == TaskFamily::PointGoal2D) {
        const std::vector<double> a = clip_box(action, kPointActionMax);
        out.next_state = {state[0] + kPointDt * a[0], state[1] + kPointDt * a[1]};
        const double dx = out.next_state[0] - task.goal_or_direction[0];
        const double dy = out.next_state[1] - task.goal_or_direction[1];
        out.reward = -std::sqrt(dx * dx + dy * dy);
        return out;
    }

    const int s = static_cast<int>(state[0]);
    if (s < 0 || s >= kChainStates) throw std::invalid_argument("env_step: state out of range");
    const int a_idx = argmax_index(action);
    const int task_dir_idx = task.goal_or_direction[0] > 0 ? 1 : 0;  // 0=left, 1=right
    const int next = a_idx == 1 ? std::min(s + 1, kChainStates - 1) : std::max(s - 1, 0);
    out.next_state = {static_cast<double>(next)};
    out.reward = a_idx == task_dir_idx ? kChainRewardMove : kChainRewardOther;
    return out;
}

std::vector<double> expert_action(const TaskSpec& task, const std::vector<double>& state) {
    if (task.family == TaskFamily::PointGoal2D) {
        return {(task.goal_or_direction[0] - state[0]) / kPointDt,
                (task.goal_or_direction[1] - state[1]) / kPointDt};
    }
    std::vector<double> a(kChainActions, 0.0);
    a[task.goal_or_direction[0] > 0 ? 1 : 0] = 1.0;
    return a;
}

core::OfflineTaskDataset rollout_behavior(const TaskSpec& task, const BehaviorPolicySpec& policy,
                                          int n_transitions, std::uint64_t seed) {
    if (n_transitions < task.horizon)
        throw std::invalid_argument("rollout_behavior: n_transitions must be >= horizon");
    if (n_transitions % task.horizon != 0)
        throw std::invalid_argument(
            "rollout_behavior: n_transitions must be a multiple of the horizon so the dataset "
            "holds complete trajectories");
    if (policy.noise_scale < 0.0)
        throw std::invalid_argument("rollout_behavior: noise_scale must be >= 0");

    Rng rng = Rng::derive(seed, 0xb0110000ULL + static_cast<std::uint64_t>(task.task_id));
    core::OfflineTaskDataset ds;
    ds.task_id = task.task_id;
    ds.transitions.reserve(static_cast<std::size_t>(n_transitions));

    const int n_episodes = n_transitions / task.horizon;
    for (int ep = 0; ep < n_episodes; ++ep) {
        bool episode_is_random = policy.kind == BehaviorKind::uniform_random;
        if (policy.kind == BehaviorKind::mixture)
            episode_is_random = !rng.bernoulli(policy.mixture_weight);

        std::vector<double> state = task.initial_state();
        for (int t = 0; t < task.horizon; ++t) {
            std::vector<double> action;
            if (task.family == TaskFamily::PointGoal2D) {
                if (episode_is_random) {
                    action = {rng.uniform(-kPointActionMax, kPointActionMax),
                              rng.uniform(-kPointActionMax, kPointActionMax)};
                } else {
                    action = expert_action(task, state);
                    if (policy.noise_scale > 0.0) {
                        action[0] += policy.noise_scale * rng.normal();
                        action[1] += policy.noise_scale * rng.normal();
                    }
                }
                // recorded action is the executed (clipped) one
                action = clip_box(std::move(action), kPointActionMax);
            } else {
                int a_idx;
                if (episode_is_random) {
                    a_idx = static_cast<int>(rng.index(kChainActions));
                } else {
                    a_idx = task.goal_or_direction[0] > 0 ? 1 : 0;
                    if (policy.noise_scale > 0.0 && rng.bernoulli(std::min(policy.noise_scale, 1.0)))
                        a_idx = static_cast<int>(rng.index(kChainActions));
                }
                action.assign(kChainActions, 0.0);
                action[static_cast<std::size_t>(a_idx)] = 1.0;
            }

            const StepResult step = env_step(task, state, action, t);
            core::TransitionRecord tr;
            tr.state = state;
            tr.action = action;
            tr.reward = step.reward;
            tr.next_state = step.next_state;
            tr.done = step.done;
            tr.task_id = task.task_id;
            ds.transitions.push_back(std::move(tr));
            state = step.next_state;
        }
    }
    return ds;
}

TabularMDP tabular_mdp_for(const TaskSpec& task) {
    if (task.family != TaskFamily::GridChainDir)
        throw std::invalid_argument("tabular_mdp_for: only GridChainDir is tabular");
    TabularMDP mdp;
    mdp.n_states = kChainStates;
    mdp.n_actions = kChainActions;
    mdp.gamma = task.gamma;
    mdp.transition.assign(kChainStates,
                          std::vector<std::vector<double>>(
                              kChainActions, std::vector<double>(kChainStates, 0.0)));
    mdp.reward.assign(kChainStates, std::vector<double>(kChainActions, 0.0));
    mdp.initial.assign(kChainStates, 0.0);
    mdp.initial[kChainStart] = 1.0;

    const int task_dir_idx = task.goal_or_direction[0] > 0 ? 1 : 0;
    for (int s = 0; s < kChainStates; ++s) {
        const int left = std::max(s - 1, 0);
        const int right = std::min(s + 1, kChainStates - 1);
        mdp.transition[s][0][left] = 1.0;
        mdp.transition[s][1][right] = 1.0;
        for (int a = 0; a < kChainActions; ++a)
            mdp.reward[s][a] = a == task_dir_idx ? kChainRewardMove : kChainRewardOther;
    }
    return mdp;
}

}  // namespace comrl::envlab
