#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace comrl::core {

// One offline transition (s, a, r, s', done) tagged with the task it came from.
// Value type; immutable after construction by convention.
struct TransitionRecord {
    std::vector<double> state;
    std::vector<double> action;
    double reward = 0.0;
    std::vector<double> next_state;
    bool done = false;
    int task_id = 0;
};

// Ordered transitions sharing one task_id; consecutive states chain.
struct Trajectory {
    std::vector<TransitionRecord> transitions;

    std::size_t size() const { return transitions.size(); }
    bool empty() const { return transitions.empty(); }
};

// The per-task offline dataset the whole pipeline consumes.
struct OfflineTaskDataset {
    int task_id = 0;
    std::vector<TransitionRecord> transitions;

    std::size_t size() const { return transitions.size(); }
    int state_dim() const {
        return transitions.empty() ? 0 : static_cast<int>(transitions.front().state.size());
    }
    int action_dim() const {
        return transitions.empty() ? 0 : static_cast<int>(transitions.front().action.size());
    }

    // Splits the flat transition list into complete trajectories at done flags.
    // A trailing run without a done marker is returned as a final trajectory.
    std::vector<Trajectory> trajectories() const;
};

// A set of transitions used as encoder input. The behavior part is the
// (state, action) projection, the task part the (next_state, reward) projection.
struct Context {
    std::vector<TransitionRecord> records;

    static Context from_trajectory(const Trajectory& t) { return Context{t.transitions}; }

    std::size_t size() const { return records.size(); }
    bool empty() const { return records.empty(); }
};

struct BehaviorPair {
    std::vector<double> state;
    std::vector<double> action;
};

struct TaskPair {
    std::vector<double> next_state;
    double reward = 0.0;
};

struct ContextSplit {
    std::vector<BehaviorPair> behavior_part;
    std::vector<TaskPair> task_part;
};

// Order-preserving projection of a context onto its (s,a) and (s',r) columns.
// Throws std::invalid_argument on an empty context.
ContextSplit split_context(const Context& context);

// Inverse of split_context for a known task_id / done column; used by tests
// to assert the split is lossless.
Context recombine_context(const ContextSplit& split, const std::vector<bool>& done,
                          int task_id);

// Compact task representation produced by the encoder.
struct LatentZ {
    std::vector<double> values;

    int dim() const { return static_cast<int>(values.size()); }
};

// Frozen copy of encoder parameters, used for representation-shift measurement.
struct EncoderSnapshot {
    std::vector<double> parameters;
    long step_index = 0;
};

// One problem found by validate_dataset.
struct ValidationFinding {
    std::size_t transition_index = 0;
    std::string field;
    std::string message;
};

struct ValidationReport {
    std::vector<ValidationFinding> findings;

    bool ok() const { return findings.empty(); }
    std::size_t count() const { return findings.size(); }
};

// Checks dimension consistency, finiteness and task_id homogeneity.
// Never throws; all problems are reported, an empty report means the dataset
// satisfies every invariant.
ValidationReport validate_dataset(const OfflineTaskDataset& dataset);

}  // namespace comrl::core
