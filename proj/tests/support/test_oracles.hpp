#pragma once

// Test-only oracles, independent of the implementation paths they check:
// a Monte Carlo occupancy/return estimator for the DP routines and a
// straight-line two-layer MLP evaluator for the tape-based forward pass.

#include <cmath>
#include <vector>

#include "comrl/envlab.hpp"
#include "comrl/rng.hpp"
#include "comrl/theorylab.hpp"

namespace comrl::testsupport {

// Samples (s, a) from the normalized discounted occupancy by running the
// chain and stopping with probability (1 - gamma) per step.
struct McOccupancy {
    std::vector<std::vector<double>> d;
    double mean_reward = 0.0;  // Monte Carlo estimate of J
};

inline McOccupancy mc_occupancy(const envlab::TabularMDP& mdp,
                                const theorylab::PolicyTable& policy, long n_samples,
                                std::uint64_t seed) {
    Rng rng(seed);
    McOccupancy out;
    out.d.assign(static_cast<std::size_t>(mdp.n_states),
                 std::vector<double>(static_cast<std::size_t>(mdp.n_actions), 0.0));
    double reward_acc = 0.0;
    for (long i = 0; i < n_samples; ++i) {
        int s = static_cast<int>(rng.categorical(mdp.initial));
        int a = static_cast<int>(rng.categorical(policy[static_cast<std::size_t>(s)]));
        while (rng.uniform() < mdp.gamma) {
            s = static_cast<int>(rng.categorical(
                mdp.transition[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]));
            a = static_cast<int>(rng.categorical(policy[static_cast<std::size_t>(s)]));
        }
        out.d[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] += 1.0;
        reward_acc += mdp.reward[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
    }
    for (auto& row : out.d)
        for (double& x : row) x /= static_cast<double>(n_samples);
    out.mean_reward = reward_acc / static_cast<double>(n_samples);
    return out;
}

// Straight-line evaluation of a 2-layer relu MLP (in -> h -> out), written
// without any shared code with diffcompute::forward.
inline std::vector<double> hand_mlp2(const std::vector<std::vector<double>>& w1,
                                     const std::vector<double>& b1,
                                     const std::vector<std::vector<double>>& w2,
                                     const std::vector<double>& b2,
                                     const std::vector<double>& x, bool relu_hidden = true) {
    std::vector<double> h(b1.size(), 0.0);
    for (std::size_t j = 0; j < h.size(); ++j) {
        double acc = b1[j];
        for (std::size_t k = 0; k < x.size(); ++k) acc += x[k] * w1[k][j];
        h[j] = relu_hidden ? (acc > 0.0 ? acc : 0.0) : std::tanh(acc);
    }
    std::vector<double> y(b2.size(), 0.0);
    for (std::size_t j = 0; j < y.size(); ++j) {
        double acc = b2[j];
        for (std::size_t k = 0; k < h.size(); ++k) acc += h[k] * w2[k][j];
        y[j] = acc;
    }
    return y;
}

// Packs (w1, b1, w2, b2) into the flat layout used by ParamLayout::for_mlp.
inline std::vector<double> pack_mlp2(const std::vector<std::vector<double>>& w1,
                                     const std::vector<double>& b1,
                                     const std::vector<std::vector<double>>& w2,
                                     const std::vector<double>& b2) {
    std::vector<double> flat;
    for (const auto& row : w1) flat.insert(flat.end(), row.begin(), row.end());
    flat.insert(flat.end(), b1.begin(), b1.end());
    for (const auto& row : w2) flat.insert(flat.end(), row.begin(), row.end());
    flat.insert(flat.end(), b2.begin(), b2.end());
    return flat;
}

}  // namespace comrl::testsupport
