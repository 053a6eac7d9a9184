#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "comrl/core.hpp"
#include "comrl/dataset_io.hpp"
#include "comrl/rng.hpp"

using namespace comrl;
using core::Context;
using core::OfflineTaskDataset;
using core::TransitionRecord;

namespace {

TransitionRecord make_record(std::vector<double> s, std::vector<double> a, double r,
                             std::vector<double> s2, bool done = false, int task = 0) {
    TransitionRecord tr;
    tr.state = std::move(s);
    tr.action = std::move(a);
    tr.reward = r;
    tr.next_state = std::move(s2);
    tr.done = done;
    tr.task_id = task;
    return tr;
}

Context random_context(Rng& rng, int n, int task = 0) {
    Context ctx;
    for (int i = 0; i < n; ++i)
        ctx.records.push_back(make_record({rng.normal(), rng.normal()},
                                          {rng.normal()}, rng.normal(),
                                          {rng.normal(), rng.normal()}, false, task));
    return ctx;
}

}  // namespace

TEST_CASE("split_context projects one record") {
    Context ctx;
    ctx.records.push_back(make_record({0, 0}, {1}, 0.5, {0, 1}));
    const core::ContextSplit split = core::split_context(ctx);
    REQUIRE(split.behavior_part.size() == 1);
    REQUIRE(split.task_part.size() == 1);
    CHECK(split.behavior_part[0].state == std::vector<double>{0, 0});
    CHECK(split.behavior_part[0].action == std::vector<double>{1});
    CHECK(split.task_part[0].next_state == std::vector<double>{0, 1});
    CHECK(split.task_part[0].reward == 0.5);
}

TEST_CASE("split_context preserves length and order") {
    Rng rng(7);
    for (int n : {1, 3, 17}) {
        const Context ctx = random_context(rng, n);
        const auto split = core::split_context(ctx);
        CHECK(split.behavior_part.size() == static_cast<std::size_t>(n));
        CHECK(split.task_part.size() == static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            CHECK(split.behavior_part[static_cast<std::size_t>(i)].state ==
                  ctx.records[static_cast<std::size_t>(i)].state);
            CHECK(split.task_part[static_cast<std::size_t>(i)].reward ==
                  ctx.records[static_cast<std::size_t>(i)].reward);
        }
    }
}

TEST_CASE("split_context on permuted records permutes outputs identically") {
    Rng rng(13);
    Context ctx = random_context(rng, 6);
    Context permuted;
    const std::vector<std::size_t> order = {3, 0, 5, 1, 4, 2};
    for (std::size_t i : order) permuted.records.push_back(ctx.records[i]);
    const auto split = core::split_context(ctx);
    const auto split_p = core::split_context(permuted);
    for (std::size_t i = 0; i < order.size(); ++i) {
        CHECK(split_p.behavior_part[i].state == split.behavior_part[order[i]].state);
        CHECK(split_p.task_part[i].next_state == split.task_part[order[i]].next_state);
    }
}

TEST_CASE("split_context rejects empty input") {
    CHECK_THROWS_AS(core::split_context(Context{}), std::invalid_argument);
}

TEST_CASE("context split is lossless under recombination") {
    Rng rng(42);
    const Context ctx = random_context(rng, 9, 3);
    const auto split = core::split_context(ctx);
    std::vector<bool> done(ctx.size(), false);
    const Context rebuilt = core::recombine_context(split, done, 3);
    REQUIRE(rebuilt.size() == ctx.size());
    for (std::size_t i = 0; i < ctx.size(); ++i) {
        CHECK(rebuilt.records[i].state == ctx.records[i].state);
        CHECK(rebuilt.records[i].action == ctx.records[i].action);
        CHECK(rebuilt.records[i].reward == ctx.records[i].reward);
        CHECK(rebuilt.records[i].next_state == ctx.records[i].next_state);
        CHECK(rebuilt.records[i].task_id == ctx.records[i].task_id);
    }
}

TEST_CASE("validate_dataset accepts a well-formed dataset") {
    OfflineTaskDataset ds;
    ds.task_id = 2;
    for (int i = 0; i < 5; ++i)
        ds.transitions.push_back(make_record({1, 2}, {0.5}, -1.0, {2, 3}, i == 4, 2));
    CHECK(core::validate_dataset(ds).ok());
}

TEST_CASE("validate_dataset reports one NaN reward at its index") {
    OfflineTaskDataset ds;
    ds.task_id = 0;
    for (int i = 0; i < 4; ++i)
        ds.transitions.push_back(make_record({0, 0}, {0}, 0.0, {0, 0}));
    ds.transitions[2].reward = std::nan("");
    const auto report = core::validate_dataset(ds);
    REQUIRE(report.count() == 1);
    CHECK(report.findings[0].transition_index == 2);
    CHECK(report.findings[0].field == "reward");
}

TEST_CASE("validate_dataset flags mixed task ids") {
    OfflineTaskDataset ds;
    ds.task_id = 0;
    ds.transitions.push_back(make_record({0}, {0}, 0.0, {0}, false, 0));
    ds.transitions.push_back(make_record({0}, {0}, 0.0, {0}, false, 5));
    const auto report = core::validate_dataset(ds);
    REQUIRE(report.count() == 1);
    CHECK(report.findings[0].field == "task_id");
}

TEST_CASE("validate_dataset flags dimension mismatches and non-finite values") {
    OfflineTaskDataset ds;
    ds.task_id = 0;
    ds.transitions.push_back(make_record({0, 0}, {0}, 0.0, {0, 0}));
    ds.transitions.push_back(make_record({0, 0, 0}, {0}, 0.0, {0, 0}));
    ds.transitions.push_back(
        make_record({0, std::numeric_limits<double>::infinity()}, {0}, 0.0, {0, 0}));
    const auto report = core::validate_dataset(ds);
    CHECK(report.count() == 2);
}

TEST_CASE("trajectory extraction splits on done flags") {
    OfflineTaskDataset ds;
    ds.task_id = 0;
    for (int i = 0; i < 6; ++i)
        ds.transitions.push_back(make_record({double(i)}, {0}, 0.0, {double(i + 1)}, (i + 1) % 3 == 0));
    const auto trajs = ds.trajectories();
    REQUIRE(trajs.size() == 2);
    CHECK(trajs[0].size() == 3);
    CHECK(trajs[1].size() == 3);
    // chained states within a trajectory
    for (const auto& t : trajs)
        for (std::size_t i = 0; i + 1 < t.size(); ++i)
            CHECK(t.transitions[i].next_state == t.transitions[i + 1].state);
}

TEST_CASE("dataset round-trips through the binary format bit-exactly") {
    Rng rng(99);
    OfflineTaskDataset ds;
    ds.task_id = 7;
    for (int i = 0; i < 50; ++i)
        ds.transitions.push_back(make_record({rng.normal(), rng.uniform(-3, 3)},
                                             {rng.normal() * 1e-12, rng.normal() * 1e9},
                                             rng.normal(), {rng.normal(), rng.normal()},
                                             i % 10 == 9, 7));
    const std::string path =
        (std::filesystem::temp_directory_path() / "comrl_roundtrip_test.bin").string();
    core::write_dataset(path, ds, {{"family", "PointGoal2D"}, {"seed", "99"}});
    const OfflineTaskDataset back = core::read_dataset(path);
    REQUIRE(back.size() == ds.size());
    CHECK(back.task_id == ds.task_id);
    for (std::size_t i = 0; i < ds.size(); ++i) {
        // bit-exact: compare through memcmp-equivalent equality on doubles
        CHECK(back.transitions[i].state == ds.transitions[i].state);
        CHECK(back.transitions[i].action == ds.transitions[i].action);
        CHECK(back.transitions[i].reward == ds.transitions[i].reward);
        CHECK(back.transitions[i].next_state == ds.transitions[i].next_state);
        CHECK(back.transitions[i].done == ds.transitions[i].done);
    }
    const auto meta = core::read_dataset_metadata(path);
    CHECK(meta.at("family") == "PointGoal2D");
    CHECK(meta.at("seed") == "99");
    std::filesystem::remove(path);
    std::filesystem::remove(path + ".meta");
}
