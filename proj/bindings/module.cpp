// Python bindings for the main operations: domain types, dataset generation,
// encoding, the theory-lab checks and the training/meta-test entry points.

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "comrl/dataset_io.hpp"
#include "comrl/harness.hpp"
#include "comrl/theorylab.hpp"

namespace py = pybind11;
using namespace comrl;

namespace {

// Small owning wrapper so python can build and query a task encoder without
// touching flat parameter plumbing.
class PyTaskEncoder {
public:
    PyTaskEncoder(int state_dim, int action_dim, int d_z, std::vector<int> hidden,
                  std::uint64_t seed) {
        taskenc::EncoderConfig cfg;
        cfg.d_z = d_z;
        cfg.hidden_widths = std::move(hidden);
        model_ = cfg.encoder_model(state_dim, action_dim);
        Rng rng(seed);
        params_ = diffcompute::init_params(model_.net, rng);
    }

    std::vector<double> encode(const core::Context& context) const {
        return taskenc::encode(model_, params_, context).values;
    }

    std::vector<double> parameters() const { return params_.values; }

    void set_parameters(const std::vector<double>& values) {
        if (values.size() != params_.values.size())
            throw std::invalid_argument("set_parameters: length mismatch");
        params_.values = values;
    }

private:
    taskenc::EncoderModel model_;
    diffcompute::ParameterVector params_;
};

}  // namespace

PYBIND11_MODULE(_comrl, m) {
    m.doc() = "context-based offline meta-RL lab (C++ core)";

    // ---- core -----------------------------------------------------------
    py::class_<core::TransitionRecord>(m, "TransitionRecord")
        .def(py::init<>())
        .def_readwrite("state", &core::TransitionRecord::state)
        .def_readwrite("action", &core::TransitionRecord::action)
        .def_readwrite("reward", &core::TransitionRecord::reward)
        .def_readwrite("next_state", &core::TransitionRecord::next_state)
        .def_readwrite("done", &core::TransitionRecord::done)
        .def_readwrite("task_id", &core::TransitionRecord::task_id);

    py::class_<core::Trajectory>(m, "Trajectory")
        .def(py::init<>())
        .def_readwrite("transitions", &core::Trajectory::transitions)
        .def("__len__", &core::Trajectory::size);

    py::class_<core::OfflineTaskDataset>(m, "OfflineTaskDataset")
        .def(py::init<>())
        .def_readwrite("task_id", &core::OfflineTaskDataset::task_id)
        .def_readwrite("transitions", &core::OfflineTaskDataset::transitions)
        .def("trajectories", &core::OfflineTaskDataset::trajectories)
        .def("state_dim", &core::OfflineTaskDataset::state_dim)
        .def("action_dim", &core::OfflineTaskDataset::action_dim)
        .def("__len__", &core::OfflineTaskDataset::size);

    py::class_<core::Context>(m, "Context")
        .def(py::init<>())
        .def_static("from_trajectory", &core::Context::from_trajectory)
        .def_readwrite("records", &core::Context::records)
        .def("__len__", &core::Context::size);

    py::class_<core::BehaviorPair>(m, "BehaviorPair")
        .def_readonly("state", &core::BehaviorPair::state)
        .def_readonly("action", &core::BehaviorPair::action);
    py::class_<core::TaskPair>(m, "TaskPair")
        .def_readonly("next_state", &core::TaskPair::next_state)
        .def_readonly("reward", &core::TaskPair::reward);
    py::class_<core::ContextSplit>(m, "ContextSplit")
        .def_readonly("behavior_part", &core::ContextSplit::behavior_part)
        .def_readonly("task_part", &core::ContextSplit::task_part);
    m.def("split_context", &core::split_context,
          "Order-preserving (s,a) / (s',r) projection of a context");

    py::class_<core::ValidationFinding>(m, "ValidationFinding")
        .def_readonly("transition_index", &core::ValidationFinding::transition_index)
        .def_readonly("field", &core::ValidationFinding::field)
        .def_readonly("message", &core::ValidationFinding::message);
    py::class_<core::ValidationReport>(m, "ValidationReport")
        .def_readonly("findings", &core::ValidationReport::findings)
        .def("ok", &core::ValidationReport::ok)
        .def("__len__", &core::ValidationReport::count);
    m.def("validate_dataset", &core::validate_dataset);

    m.def("write_dataset", &core::write_dataset);
    m.def("read_dataset", &core::read_dataset);

    // ---- envlab ----------------------------------------------------------
    py::enum_<envlab::TaskFamily>(m, "TaskFamily")
        .value("PointGoal2D", envlab::TaskFamily::PointGoal2D)
        .value("GridChainDir", envlab::TaskFamily::GridChainDir);

    py::class_<envlab::TaskSpec>(m, "TaskSpec")
        .def(py::init<>())
        .def_readwrite("family", &envlab::TaskSpec::family)
        .def_readwrite("task_id", &envlab::TaskSpec::task_id)
        .def_readwrite("goal_or_direction", &envlab::TaskSpec::goal_or_direction)
        .def_readwrite("horizon", &envlab::TaskSpec::horizon)
        .def_readwrite("gamma", &envlab::TaskSpec::gamma)
        .def("state_dim", &envlab::TaskSpec::state_dim)
        .def("action_dim", &envlab::TaskSpec::action_dim)
        .def("initial_state", &envlab::TaskSpec::initial_state);

    py::class_<envlab::TabularMDP>(m, "TabularMDP")
        .def(py::init<>())
        .def_readwrite("n_states", &envlab::TabularMDP::n_states)
        .def_readwrite("n_actions", &envlab::TabularMDP::n_actions)
        .def_readwrite("transition", &envlab::TabularMDP::transition)
        .def_readwrite("reward", &envlab::TabularMDP::reward)
        .def_readwrite("initial", &envlab::TabularMDP::initial)
        .def_readwrite("gamma", &envlab::TabularMDP::gamma)
        .def("reward_bound", &envlab::TabularMDP::reward_bound)
        .def("validate", &envlab::TabularMDP::validate);

    py::enum_<envlab::BehaviorKind>(m, "BehaviorKind")
        .value("noisy_expert", envlab::BehaviorKind::noisy_expert)
        .value("uniform_random", envlab::BehaviorKind::uniform_random)
        .value("mixture", envlab::BehaviorKind::mixture);

    py::class_<envlab::BehaviorPolicySpec>(m, "BehaviorPolicySpec")
        .def(py::init<>())
        .def_readwrite("kind", &envlab::BehaviorPolicySpec::kind)
        .def_readwrite("noise_scale", &envlab::BehaviorPolicySpec::noise_scale)
        .def_readwrite("mixture_weight", &envlab::BehaviorPolicySpec::mixture_weight);

    m.def("make_task_family", &envlab::make_task_family, py::arg("family"), py::arg("n_train"),
          py::arg("n_test"), py::arg("seed"));

    py::class_<envlab::StepResult>(m, "StepResult")
        .def_readonly("next_state", &envlab::StepResult::next_state)
        .def_readonly("reward", &envlab::StepResult::reward)
        .def_readonly("done", &envlab::StepResult::done);
    m.def("env_step", &envlab::env_step, py::arg("task"), py::arg("state"), py::arg("action"),
          py::arg("step_index") = 0);
    m.def("expert_action", &envlab::expert_action);
    m.def("rollout_behavior", &envlab::rollout_behavior);
    m.def("tabular_mdp_for", &envlab::tabular_mdp_for);

    // ---- taskenc ----------------------------------------------------------
    py::class_<PyTaskEncoder>(m, "TaskEncoder")
        .def(py::init<int, int, int, std::vector<int>, std::uint64_t>(), py::arg("state_dim"),
             py::arg("action_dim"), py::arg("d_z"), py::arg("hidden") = std::vector<int>{32, 32},
             py::arg("seed") = 0)
        .def("encode", &PyTaskEncoder::encode)
        .def("parameters", &PyTaskEncoder::parameters)
        .def("set_parameters", &PyTaskEncoder::set_parameters);

    m.def(
        "gated_update",
        [](long step, int update_frequency, const std::function<void()>& fn) {
            taskenc::EncoderConfig cfg;
            cfg.update_frequency = update_frequency;
            return taskenc::gated_update(step, cfg, fn);
        },
        py::arg("step"), py::arg("update_frequency"), py::arg("update_fn"),
        "Invokes update_fn iff step %% update_frequency == 0; returns whether it ran");

    // ---- theorylab ----------------------------------------------------------
    py::class_<theorylab::OccupancyTable>(m, "OccupancyTable")
        .def_readonly("d", &theorylab::OccupancyTable::d)
        .def("total", &theorylab::OccupancyTable::total);
    m.def("discounted_occupancy", &theorylab::discounted_occupancy);
    m.def("exact_return", &theorylab::exact_return);

    py::class_<theorylab::BoundReport>(m, "BoundReport")
        .def_readonly("sweep_name", &theorylab::BoundReport::sweep_name)
        .def_readonly("n_configs", &theorylab::BoundReport::n_configs)
        .def_readonly("n_violations", &theorylab::BoundReport::n_violations)
        .def_readonly("min_margin", &theorylab::BoundReport::min_margin)
        .def_readonly("runtime_seconds", &theorylab::BoundReport::runtime_seconds)
        .def_readonly("n_condition_holds", &theorylab::BoundReport::n_condition_holds)
        .def_readonly("n_condition_and_improved",
                      &theorylab::BoundReport::n_condition_and_improved)
        .def("passed", &theorylab::BoundReport::passed);

    m.def("verify_return_bound", &theorylab::verify_return_bound, py::arg("n_configs"),
          py::arg("seed"));
    m.def("verify_perf_diff_bound", &theorylab::verify_perf_diff_bound, py::arg("n_configs"),
          py::arg("seed"));
    m.def("lemma_a1_check", &theorylab::lemma_a1_check, py::arg("n_configs"), py::arg("seed"));

    py::class_<theorylab::WeissmanResult>(m, "WeissmanResult")
        .def_readonly("empirical_rate", &theorylab::WeissmanResult::empirical_rate)
        .def_readonly("analytic_bound", &theorylab::WeissmanResult::analytic_bound)
        .def_readonly("binomial_sigma", &theorylab::WeissmanResult::binomial_sigma)
        .def_readonly("ok", &theorylab::WeissmanResult::ok);
    m.def("verify_weissman", &theorylab::verify_weissman, py::arg("alphabet_size"), py::arg("m"),
          py::arg("eps"), py::arg("n_trials"), py::arg("seed"));

    py::class_<theorylab::CorollaryConfig>(m, "CorollaryConfig")
        .def(py::init<>())
        .def_readwrite("r_max", &theorylab::CorollaryConfig::r_max)
        .def_readwrite("gamma", &theorylab::CorollaryConfig::gamma)
        .def_readwrite("l_z", &theorylab::CorollaryConfig::l_z)
        .def_readwrite("eps_mutual", &theorylab::CorollaryConfig::eps_mutual)
        .def_readwrite("beta", &theorylab::CorollaryConfig::beta)
        .def_readwrite("vol_z", &theorylab::CorollaryConfig::vol_z)
        .def_readwrite("xi", &theorylab::CorollaryConfig::xi)
        .def_readwrite("n_pretrain", &theorylab::CorollaryConfig::n_pretrain)
        .def("kappa", &theorylab::CorollaryConfig::kappa);

    py::class_<theorylab::CorollaryK>(m, "CorollaryK")
        .def_readonly("k", &theorylab::CorollaryK::k)
        .def_readonly("k_ceil", &theorylab::CorollaryK::k_ceil)
        .def_readonly("k_needed", &theorylab::CorollaryK::k_needed);
    m.def("corollary_k", &theorylab::corollary_k);

    py::class_<theorylab::CorollaryVerification>(m, "CorollaryVerification")
        .def_readonly("success_rate", &theorylab::CorollaryVerification::success_rate)
        .def_readonly("required_rate", &theorylab::CorollaryVerification::required_rate)
        .def_readonly("epsilon_target", &theorylab::CorollaryVerification::epsilon_target)
        .def_readonly("samples_per_trial", &theorylab::CorollaryVerification::samples_per_trial)
        .def_readonly("ok", &theorylab::CorollaryVerification::ok);
    m.def("verify_corollary", &theorylab::verify_corollary, py::arg("config"),
          py::arg("n_trials"), py::arg("seed"));

    // ---- harness ----------------------------------------------------------
    py::class_<harness::TrainingConfig>(m, "TrainingConfig")
        .def(py::init<>())
        .def_static("with_preset", &harness::TrainingConfig::with_preset)
        .def_static("from_file", &harness::TrainingConfig::from_file)
        .def("set_key", &harness::TrainingConfig::set_key)
        .def("digest", &harness::TrainingConfig::digest)
        .def("canonical_text", &harness::TrainingConfig::canonical_text)
        .def_readwrite("family", &harness::TrainingConfig::family)
        .def_readwrite("n_train_tasks", &harness::TrainingConfig::n_train_tasks)
        .def_readwrite("n_test_tasks", &harness::TrainingConfig::n_test_tasks)
        .def_readwrite("task_batch_size", &harness::TrainingConfig::task_batch_size)
        .def_readwrite("rl_batch_size", &harness::TrainingConfig::rl_batch_size)
        .def_readwrite("update_frequency", &harness::TrainingConfig::update_frequency)
        .def_readwrite("learning_rate", &harness::TrainingConfig::learning_rate)
        .def_readwrite("total_steps", &harness::TrainingConfig::total_steps)
        .def_readwrite("eval_interval", &harness::TrainingConfig::eval_interval)
        .def_readwrite("steps_per_iteration", &harness::TrainingConfig::steps_per_iteration)
        .def_readwrite("seed", &harness::TrainingConfig::seed)
        .def_readwrite("out_dir", &harness::TrainingConfig::out_dir)
        .def_readwrite("data_dir", &harness::TrainingConfig::data_dir)
        .def_readwrite("run_label", &harness::TrainingConfig::run_label)
        .def_readwrite("transitions_per_task", &harness::TrainingConfig::transitions_per_task)
        .def_readwrite("total_steps", &harness::TrainingConfig::total_steps)
        .def_readwrite("behavior_clone_steps", &harness::TrainingConfig::behavior_clone_steps)
        .def_readwrite("eval_episodes", &harness::TrainingConfig::eval_episodes)
        .def_readwrite("noise_scale", &harness::TrainingConfig::noise_scale)
        .def_readwrite("holdout_trajectories", &harness::TrainingConfig::holdout_trajectories)
        .def_readwrite("probe_contexts", &harness::TrainingConfig::probe_contexts);

    py::class_<harness::RunArtifacts>(m, "RunArtifacts")
        .def_readonly("out_dir", &harness::RunArtifacts::out_dir)
        .def_readonly("config_digest", &harness::RunArtifacts::config_digest)
        .def_readonly("run_label", &harness::RunArtifacts::run_label)
        .def_readonly("seed", &harness::RunArtifacts::seed)
        .def_readonly("total_steps", &harness::RunArtifacts::total_steps)
        .def_readonly("encoder_updates", &harness::RunArtifacts::encoder_updates)
        .def_readonly("wall_seconds", &harness::RunArtifacts::wall_seconds)
        .def_readonly("final_mean_return", &harness::RunArtifacts::final_mean_return)
        .def_readonly("final_accuracy", &harness::RunArtifacts::final_accuracy)
        .def_readonly("returns_csv", &harness::RunArtifacts::returns_csv)
        .def_readonly("accuracy_csv", &harness::RunArtifacts::accuracy_csv)
        .def_readonly("shift_csv", &harness::RunArtifacts::shift_csv);

    m.def("gen_datasets", &harness::gen_datasets);
    m.def("run_training", &harness::run_training,
          py::call_guard<py::gil_scoped_release>());
    m.def("load_artifacts", &harness::load_artifacts);

    py::class_<harness::MetaTestRow>(m, "MetaTestRow")
        .def_readonly("task_id", &harness::MetaTestRow::task_id)
        .def_readonly("mean_return", &harness::MetaTestRow::mean_return)
        .def_readonly("std_return", &harness::MetaTestRow::std_return)
        .def_readonly("context_id", &harness::MetaTestRow::context_id);
    py::class_<harness::MetaTestResult>(m, "MetaTestResult")
        .def_readonly("rows", &harness::MetaTestResult::rows)
        .def_readonly("aggregate_mean", &harness::MetaTestResult::aggregate_mean)
        .def_readonly("aggregate_std", &harness::MetaTestResult::aggregate_std)
        .def_readonly("csv_path", &harness::MetaTestResult::csv_path);
    m.def("run_meta_test", &harness::run_meta_test, py::arg("artifacts"), py::arg("n_episodes"),
          py::arg("seed"), py::call_guard<py::gil_scoped_release>());
}
