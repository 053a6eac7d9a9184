#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "comrl/diffcompute.hpp"
#include "test_oracles.hpp"

using namespace comrl;
using namespace comrl::diffcompute;

namespace {

ApproximatorSpec small_spec(int in, std::vector<int> widths,
                            Activation act = Activation::relu,
                            OutputTransform out = OutputTransform::identity) {
    ApproximatorSpec spec;
    spec.input_dim = in;
    spec.layer_widths = std::move(widths);
    spec.activation = act;
    spec.output_transform = out;
    return spec;
}

}  // namespace

TEST_CASE("forward with zero weights and identity output is zero") {
    const ApproximatorSpec spec = small_spec(3, {4, 2});
    const ParameterVector params = zero_params(spec);
    const std::vector<double> y = forward(spec, params, {1.0, -2.0, 0.5});
    REQUIRE(y.size() == 2);
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
}

TEST_CASE("softmax on equal logits is uniform and sums to 1") {
    ApproximatorSpec spec = small_spec(2, {2}, Activation::relu, OutputTransform::softmax);
    const ParameterVector params = zero_params(spec);  // logits [0, 0]
    const std::vector<double> y = forward(spec, params, {0.3, -0.7});
    REQUIRE(y.size() == 2);
    CHECK(y[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(y[1] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(y[0] + y[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("forward matches an independent hand-rolled matrix evaluation") {
    // fixed 2 -> 3 -> 2 relu net with hand-picked constants
    const std::vector<std::vector<double>> w1 = {{0.5, -1.0, 0.25}, {2.0, 0.75, -0.5}};
    const std::vector<double> b1 = {0.1, -0.2, 0.3};
    const std::vector<std::vector<double>> w2 = {{1.0, -1.5}, {0.5, 0.25}, {-2.0, 1.0}};
    const std::vector<double> b2 = {0.05, -0.6};

    const ApproximatorSpec spec = small_spec(2, {3, 2});
    ParameterVector params;
    params.layout = ParamLayout::for_mlp(spec);
    params.values = testsupport::pack_mlp2(w1, b1, w2, b2);
    REQUIRE(params.values.size() == params.layout.total);

    for (const std::vector<double>& x :
         {std::vector<double>{0.4, -1.2}, std::vector<double>{-2.0, 0.0},
          std::vector<double>{1.0, 1.0}}) {
        const std::vector<double> expected = testsupport::hand_mlp2(w1, b1, w2, b2, x);
        const std::vector<double> got = forward(spec, params, x);
        REQUIRE(got.size() == expected.size());
        for (std::size_t i = 0; i < got.size(); ++i)
            CHECK(got[i] == doctest::Approx(expected[i]).epsilon(1e-15));
    }
}

TEST_CASE("forward is deterministic and pure") {
    Rng rng(3);
    const ApproximatorSpec spec = small_spec(4, {8, 8, 3}, Activation::tanh_act);
    const ParameterVector params = init_params(spec, rng);
    const std::vector<double> x = {0.1, -0.3, 2.0, 0.7};
    const std::vector<double> a = forward(spec, params, x);
    const std::vector<double> b = forward(spec, params, x);
    CHECK(a == b);
}

TEST_CASE("forward rejects bad input width and non-finite parameters") {
    const ApproximatorSpec spec = small_spec(3, {2});
    ParameterVector params = zero_params(spec);
    CHECK_THROWS_AS(forward(spec, params, {1.0}), std::invalid_argument);
    params.values[0] = std::nan("");
    CHECK_THROWS_AS(forward(spec, params, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("grad of squared norm over two is the parameter vector") {
    const ApproximatorSpec spec = small_spec(2, {2});
    Rng rng(5);
    const ParameterVector params = init_params(spec, rng);
    const TapeLoss loss = [](Tape& t, Tape::Node p) {
        return t.scale(t.sum_all(t.square(p)), 0.5);
    };
    const std::vector<double> g = grad(loss, params);
    REQUIRE(g.size() == params.values.size());
    for (std::size_t i = 0; i < g.size(); ++i)
        CHECK(g[i] == doctest::Approx(params.values[i]).epsilon(1e-12));
}

TEST_CASE("grad of a constant loss is zero") {
    const ApproximatorSpec spec = small_spec(2, {3});
    Rng rng(6);
    const ParameterVector params = init_params(spec, rng);
    const TapeLoss loss = [](Tape& t, Tape::Node p) {
        (void)p;
        return t.leaf(Mat(1, 1, {3.5}));
    };
    for (double g : grad(loss, params)) CHECK(g == 0.0);
}

TEST_CASE("MLP cross-entropy gradient matches central finite differences") {
    Rng rng(11);
    const ApproximatorSpec spec = small_spec(3, {8, 4});
    const ParameterVector params = init_params(spec, rng);

    Mat inputs(5, 3);
    for (double& v : inputs.v) v = rng.normal();
    const std::vector<int> labels = {0, 2, 1, 3, 2};

    const TapeLoss loss = [&](Tape& t, Tape::Node p) {
        Tape::Node x = t.leaf(inputs);
        Tape::Node logits = mlp_forward(t, spec, p, x);
        return t.softmax_cross_entropy(logits, labels);
    };
    CHECK(finite_diff_check(loss, params, 1e-5) <= 1e-4);
}

TEST_CASE("tanh MLP with mse head passes the finite-difference oracle") {
    Rng rng(21);
    const ApproximatorSpec spec = small_spec(4, {6, 6, 2}, Activation::tanh_act);
    const ParameterVector params = init_params(spec, rng);
    Mat inputs(4, 4);
    Mat targets(4, 2);
    for (double& v : inputs.v) v = rng.normal();
    for (double& v : targets.v) v = rng.normal();
    const TapeLoss loss = [&](Tape& t, Tape::Node p) {
        return t.mse_against(mlp_forward(t, spec, p, t.leaf(inputs)), targets);
    };
    CHECK(finite_diff_check(loss, params, 1e-5) <= 1e-4);
}

TEST_CASE("finite_diff_check on a quadratic is tiny and on a constant is zero") {
    const ApproximatorSpec spec = small_spec(2, {2});
    Rng rng(8);
    const ParameterVector params = init_params(spec, rng);
    const TapeLoss quad = [](Tape& t, Tape::Node p) {
        return t.scale(t.sum_all(t.square(p)), 0.5);
    };
    CHECK(finite_diff_check(quad, params, 1e-5) <= 1e-7);
    const TapeLoss constant = [](Tape& t, Tape::Node p) {
        (void)p;
        return t.leaf(Mat(1, 1, {1.0}));
    };
    CHECK(finite_diff_check(constant, params, 1e-5) == 0.0);
}

TEST_CASE("adam leaves params unchanged under zero gradient from a fresh state") {
    const ApproximatorSpec spec = small_spec(3, {3});
    Rng rng(4);
    ParameterVector params = init_params(spec, rng);
    const ParameterVector before = params;
    OptimizerState st = OptimizerState::for_params(params, 1e-3);
    adam_step(params, std::vector<double>(params.size(), 0.0), st);
    CHECK(params.values == before.values);
    CHECK(st.step_count == 1);
}

TEST_CASE("adam decays existing moments under zero gradient") {
    const ApproximatorSpec spec = small_spec(2, {1});
    ParameterVector params = zero_params(spec);
    OptimizerState st = OptimizerState::for_params(params, 1e-3);
    st.first_moment.assign(params.size(), 1.0);
    st.second_moment.assign(params.size(), 1.0);
    adam_step(params, std::vector<double>(params.size(), 0.0), st);
    for (double m : st.first_moment) CHECK(m == doctest::Approx(0.9).epsilon(1e-12));
    for (double v : st.second_moment) CHECK(v == doctest::Approx(0.999).epsilon(1e-12));
}

TEST_CASE("first adam step moves by about -lr * sign(gradient)") {
    const ApproximatorSpec spec = small_spec(2, {2});
    ParameterVector params = zero_params(spec);
    OptimizerState st = OptimizerState::for_params(params, 0.01);
    std::vector<double> g(params.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = (i % 2 == 0) ? 3.0 : -0.25;
    adam_step(params, g, st);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const double expected = -0.01 * g[i] / (std::abs(g[i]) + st.epsilon);
        CHECK(params.values[i] == doctest::Approx(expected).epsilon(1e-9));
    }
}

TEST_CASE("adam rejects non-finite gradients") {
    const ApproximatorSpec spec = small_spec(2, {1});
    ParameterVector params = zero_params(spec);
    OptimizerState st = OptimizerState::for_params(params, 1e-3);
    std::vector<double> g(params.size(), 0.0);
    g[0] = std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(adam_step(params, g, st), std::runtime_error);
}

TEST_CASE("100 adam steps on a quadratic bowl decrease the loss after step 5") {
    // loss = 0.5 ||p - target||^2
    const ApproximatorSpec spec = small_spec(4, {4});
    Rng rng(17);
    ParameterVector params = init_params(spec, rng);
    std::vector<double> target(params.size());
    for (double& t : target) t = rng.normal();

    auto loss_value_at = [&](const ParameterVector& p) {
        double acc = 0.0;
        for (std::size_t i = 0; i < p.values.size(); ++i) {
            const double d = p.values[i] - target[i];
            acc += 0.5 * d * d;
        }
        return acc;
    };
    OptimizerState st = OptimizerState::for_params(params, 0.05);
    std::vector<double> losses;
    for (int step = 0; step < 100; ++step) {
        losses.push_back(loss_value_at(params));
        std::vector<double> g(params.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = params.values[i] - target[i];
        adam_step(params, g, st);
    }
    losses.push_back(loss_value_at(params));
    for (std::size_t i = 5; i + 1 < losses.size(); ++i) CHECK(losses[i + 1] < losses[i]);
}

TEST_CASE("mean_rows is invariant to row order and exact row duplication") {
    Rng rng(23);
    for (int trial = 0; trial < 25; ++trial) {
        const int rows = 2 + static_cast<int>(rng.index(6));
        const int cols = 1 + static_cast<int>(rng.index(4));
        Mat m(rows, cols);
        for (double& v : m.v) v = rng.normal() * std::pow(10.0, rng.uniform(-3, 3));

        Mat shuffled = m;
        std::vector<int> order(static_cast<std::size_t>(rows));
        for (int i = 0; i < rows; ++i) order[static_cast<std::size_t>(i)] = i;
        rng.shuffle(order);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c)
                shuffled.at(r, c) = m.at(order[static_cast<std::size_t>(r)], c);

        Mat doubled(rows * 2, cols);
        for (int r = 0; r < rows * 2; ++r)
            for (int c = 0; c < cols; ++c) doubled.at(r, c) = m.at(r % rows, c);

        Tape t;
        const auto base = t.value(t.mean_rows(t.leaf(m))).v;
        const auto perm = t.value(t.mean_rows(t.leaf(shuffled))).v;
        const auto dup = t.value(t.mean_rows(t.leaf(doubled))).v;
        CHECK(base == perm);  // bit-identical
        CHECK(base == dup);
    }
}

TEST_CASE("tape min_ routes gradient to the smaller branch") {
    Tape t;
    const Tape::Node a = t.leaf(Mat(1, 3, {1.0, 5.0, 2.0}));
    const Tape::Node b = t.leaf(Mat(1, 3, {2.0, 4.0, 2.0}));
    const Tape::Node loss = t.sum_all(t.min_(a, b));
    t.backward(loss);
    CHECK(t.grad(a).v == std::vector<double>{1.0, 0.0, 1.0});  // tie goes to a
    CHECK(t.grad(b).v == std::vector<double>{0.0, 1.0, 0.0});
}

TEST_CASE("backward rejects non-finite losses") {
    Tape t;
    const Tape::Node bad = t.leaf(Mat(1, 1, {std::numeric_limits<double>::quiet_NaN()}));
    CHECK_THROWS_AS(t.backward(bad), std::runtime_error);
}

TEST_CASE("checkpoints round-trip parameters and optimizer moments") {
    Rng rng(31);
    const ApproximatorSpec spec = small_spec(5, {7, 3});
    ParameterVector params = init_params(spec, rng);
    OptimizerState st = OptimizerState::for_params(params, 2.5e-4);
    for (auto& m : st.first_moment) m = rng.normal();
    for (auto& v : st.second_moment) v = std::abs(rng.normal());
    st.step_count = 1234;

    const std::string path =
        (std::filesystem::temp_directory_path() / "comrl_ckpt_test.bin").string();
    write_checkpoint(path, params, &st);
    const Checkpoint ck = read_checkpoint(path);
    CHECK(ck.params.values == params.values);
    CHECK(ck.params.layout == params.layout);
    REQUIRE(ck.has_opt_state);
    CHECK(ck.opt_state.first_moment == st.first_moment);
    CHECK(ck.opt_state.second_moment == st.second_moment);
    CHECK(ck.opt_state.step_count == 1234);
    CHECK(ck.opt_state.learning_rate == 2.5e-4);
    std::filesystem::remove(path);
}
