#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "comrl/envlab.hpp"
#include "comrl/rng.hpp"

namespace comrl::theorylab {

using envlab::TabularMDP;

// Discounted state-action visitation, normalized by (1-gamma); sums to 1.
struct OccupancyTable {
    std::vector<std::vector<double>> d;  // [s][a]

    double total() const;
};

// Row-stochastic policy table pi[s][a].
using PolicyTable = std::vector<std::vector<double>>;

// Solves the occupancy linear system exactly (LU with partial pivoting).
OccupancyTable discounted_occupancy(const TabularMDP& mdp, const PolicyTable& policy);

// Normalized expected return J = sum_{s,a} d(s,a) R(s,a); |J| <= R_max.
double exact_return(const TabularMDP& mdp, const PolicyTable& policy);

// A policy family conditioned on distribution-vectors over a finite latent
// alphabet: pi(a|s,Z) = sum_k Z[k] softmax_a(W[s][k][.]). The family is
// Lipschitz in Z by construction; lipschitz_bound holds the enumerated
// certificate max_{s,(z,z')} |pi(.|s,z)-pi(.|s,z')|_1 / |z-z'|_1.
struct LipschitzPolicyFamily {
    int n_states = 0;
    int n_actions = 0;
    int n_latent = 0;
    std::vector<double> weights;                    // [s][k][a] flattened
    std::vector<std::vector<double>> latent_space;  // distribution vectors
    double lipschitz_bound = 0.0;

    double& w(int s, int k, int a) {
        return weights[(static_cast<std::size_t>(s) * n_latent + k) * n_actions + a];
    }
    double w(int s, int k, int a) const {
        return weights[(static_cast<std::size_t>(s) * n_latent + k) * n_actions + a];
    }

    PolicyTable policy_for(const std::vector<double>& z) const;

    // Enumerates all latent_space pairs; returns the certified constant.
    double compute_lipschitz_bound();
    // Re-checks the certificate by enumeration (used before every sweep).
    bool verify_certificate(double tol = 1e-12) const;
};

// Per-context reference representations over the latent alphabet.
struct ReferenceRepresentation {
    double weight = 1.0;  // p(x|m)
    std::vector<double> z_star;
    std::vector<double> z_mutual;
    std::vector<double> z_1;
    std::vector<double> z_2;

    bool supports_cover() const;  // support(z_1), support(z_2) cover z_mutual
};

struct TheoryTask {
    TabularMDP mdp;
    double weight = 1.0;  // p(m)
    std::vector<ReferenceRepresentation> contexts;
};

// One randomized verification instance; gamma and R_max are shared across
// its tasks so the bound constants are well-defined.
struct SweepConfig {
    double gamma = 0.9;
    double r_max = 1.0;
    LipschitzPolicyFamily policy_1;  // theta_1 (the only policy for Theorem 2)
    LipschitzPolicyFamily policy_2;  // theta_2 (Theorem 3)
    std::vector<TheoryTask> tasks;

    double kappa() const;  // 2 R_max / (1-gamma)^2
};

struct BoundCheck {
    double lhs = 0.0;
    double rhs = 0.0;
    double margin = 0.0;  // rhs - lhs for upper bounds, lhs - rhs for lower bounds
    // Theorem 3 extras
    double eps_mutual = 0.0;
    bool condition_holds = false;   // Eq-(11)-style monotonicity requirement
    bool improvement_holds = false; // J^2(theta_2) > J^1(theta_1)
};

// Exact per-config checks; exposed so tests can drive constructed instances.
BoundCheck check_return_bound(const SweepConfig& config);
BoundCheck check_perf_diff_bound(const SweepConfig& config);

// Random instance generators (deterministic in rng state).
SweepConfig random_sweep_config(Rng& rng, bool for_perf_diff);

struct BoundReport {
    std::string sweep_name;
    std::uint64_t seed = 0;
    int n_configs = 0;
    int n_violations = 0;
    double min_margin = 0.0;
    double runtime_seconds = 0.0;
    std::vector<double> margins;
    // Theorem-3 monotonicity statistics (zero elsewhere)
    int n_condition_holds = 0;
    int n_condition_and_improved = 0;

    bool passed() const;
};

// Violations are counted with tolerance 1e-9 on the margin.
inline constexpr double kMarginTolerance = 1e-9;

// Theorem 2 sweep: RHS - LHS >= -tol for every randomized config.
BoundReport verify_return_bound(int n_configs, std::uint64_t seed);

// Theorem 3 sweep over configs with eps_mutual > 0; also tallies whether the
// monotonicity condition implies strict improvement.
BoundReport verify_perf_diff_bound(int n_configs, std::uint64_t seed);

// Lemma A.1: |V^{pi2}_{M2} - V^{pi1}_{M1}| bounded via max_s TV(pi1,pi2) and
// the occupancy-weighted model TV, all computed by DP.
BoundReport lemma_a1_check(int n_configs, std::uint64_t seed);

struct WeissmanResult {
    double empirical_rate = 0.0;
    double analytic_bound = 0.0;
    double binomial_sigma = 0.0;  // sqrt(p(1-p)/n) at p = min(bound, 1)
    int alphabet_size = 0;
    int n_samples = 0;
    double epsilon = 0.0;
    int n_trials = 0;
    bool ok = false;  // empirical <= bound + 3 sigma
};

// Monte Carlo check of the L1 empirical-distribution tail bound
// Pr(|P - Phat|_1 >= eps) <= (2^|A| - 2) exp(-m eps^2 / 2) with uniform P.
WeissmanResult verify_weissman(int alphabet_size, int m, double eps, int n_trials,
                               std::uint64_t seed);

struct CorollaryConfig {
    double r_max = 1.0;
    double gamma = 0.0;
    double l_z = 1.0;
    double eps_mutual = 1.0;
    double beta = 0.1;
    int vol_z = 2;
    double xi = 0.5;
    long n_pretrain = 0;  // N

    double kappa() const { return 2.0 * r_max / ((1.0 - gamma) * (1.0 - gamma)); }
    void validate() const;  // throws on infeasible settings
};

struct CorollaryK {
    double k = 0.0;
    long k_ceil = 0;
    double k_needed = 0.0;  // max(k, 0)
};

// Exact evaluation of the extra-sample count
// k = 8 kappa^2 L_z^2 / (eps_mutual - kappa L_z beta)^2 * log((2^vol - 2)/xi) - N.
CorollaryK corollary_k(const CorollaryConfig& config);

struct CorollaryVerification {
    double success_rate = 0.0;
    double required_rate = 0.0;    // 1 - xi
    double epsilon_target = 0.0;
    long samples_per_trial = 0;
    int n_trials = 0;
    bool ok = false;
};

// Empirically checks that N + ceil(k) samples from a uniform Z_mutual land
// within the Eq-(11) radius with probability at least 1 - xi.
CorollaryVerification verify_corollary(const CorollaryConfig& config, int n_trials,
                                       std::uint64_t seed);

// JSON report with config digest, margin histogram buckets and pass/fail.
void write_report_json(const std::string& path, const BoundReport& report);

}  // namespace comrl::theorylab
