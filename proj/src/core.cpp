#include "comrl/core.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace comrl::core {

std::vector<Trajectory> OfflineTaskDataset::trajectories() const {
    std::vector<Trajectory> out;
    Trajectory current;
    for (const auto& tr : transitions) {
        current.transitions.push_back(tr);
        if (tr.done) {
            out.push_back(std::move(current));
            current = Trajectory{};
        }
    }
    if (!current.empty()) out.push_back(std::move(current));
    return out;
}

ContextSplit split_context(const Context& context) {
    if (context.empty()) throw std::invalid_argument("split_context: empty context");
    ContextSplit split;
    split.behavior_part.reserve(context.size());
    split.task_part.reserve(context.size());
    for (const auto& r : context.records) {
        split.behavior_part.push_back(BehaviorPair{r.state, r.action});
        split.task_part.push_back(TaskPair{r.next_state, r.reward});
    }
    return split;
}

Context recombine_context(const ContextSplit& split, const std::vector<bool>& done,
                          int task_id) {
    if (split.behavior_part.size() != split.task_part.size() ||
        split.behavior_part.size() != done.size())
        throw std::invalid_argument("recombine_context: part lengths differ");
    Context ctx;
    ctx.records.reserve(done.size());
    for (std::size_t i = 0; i < done.size(); ++i) {
        TransitionRecord r;
        r.state = split.behavior_part[i].state;
        r.action = split.behavior_part[i].action;
        r.next_state = split.task_part[i].next_state;
        r.reward = split.task_part[i].reward;
        r.done = done[i];
        r.task_id = task_id;
        ctx.records.push_back(std::move(r));
    }
    return ctx;
}

namespace {

bool all_finite(const std::vector<double>& v) {
    for (double x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

std::string at_index(const char* what, std::size_t i) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%s at transition %zu", what, i);
    return buf;
}

}  // namespace

ValidationReport validate_dataset(const OfflineTaskDataset& dataset) {
    ValidationReport report;
    auto add = [&](std::size_t i, const char* field, std::string msg) {
        report.findings.push_back(ValidationFinding{i, field, std::move(msg)});
    };

    if (dataset.transitions.empty()) {
        add(0, "transitions", "dataset is empty");
        return report;
    }

    const std::size_t state_dim = dataset.transitions.front().state.size();
    const std::size_t action_dim = dataset.transitions.front().action.size();

    for (std::size_t i = 0; i < dataset.transitions.size(); ++i) {
        const auto& tr = dataset.transitions[i];
        if (tr.state.size() != state_dim)
            add(i, "state", at_index("state dimension mismatch", i));
        if (tr.next_state.size() != state_dim)
            add(i, "next_state", at_index("next_state dimension mismatch", i));
        if (tr.action.size() != action_dim)
            add(i, "action", at_index("action dimension mismatch", i));
        if (!all_finite(tr.state)) add(i, "state", at_index("non-finite state", i));
        if (!all_finite(tr.action)) add(i, "action", at_index("non-finite action", i));
        if (!all_finite(tr.next_state))
            add(i, "next_state", at_index("non-finite next_state", i));
        if (!std::isfinite(tr.reward)) add(i, "reward", at_index("non-finite reward", i));
        if (tr.task_id != dataset.task_id)
            add(i, "task_id", at_index("task_id differs from dataset task_id", i));
    }
    return report;
}

}  // namespace comrl::core
