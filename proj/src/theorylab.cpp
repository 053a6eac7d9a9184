#include "comrl/theorylab.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "comrl/detail/parallel.hpp"

namespace comrl::theorylab {

namespace {

// Solves A x = b in place by LU with partial pivoting; A is n x n row-major.
std::vector<double> solve_linear(std::vector<double> a, std::vector<double> b) {
    const int n = static_cast<int>(b.size());
    for (int col = 0; col < n; ++col) {
        int pivot = col;
        for (int r = col + 1; r < n; ++r)
            if (std::abs(a[static_cast<std::size_t>(r) * n + col]) >
                std::abs(a[static_cast<std::size_t>(pivot) * n + col]))
                pivot = r;
        if (std::abs(a[static_cast<std::size_t>(pivot) * n + col]) < 1e-14)
            throw std::runtime_error("solve_linear: singular system");
        if (pivot != col) {
            for (int c = 0; c < n; ++c)
                std::swap(a[static_cast<std::size_t>(pivot) * n + c],
                          a[static_cast<std::size_t>(col) * n + c]);
            std::swap(b[static_cast<std::size_t>(pivot)], b[static_cast<std::size_t>(col)]);
        }
        const double diag = a[static_cast<std::size_t>(col) * n + col];
        for (int r = col + 1; r < n; ++r) {
            const double factor = a[static_cast<std::size_t>(r) * n + col] / diag;
            if (factor == 0.0) continue;
            a[static_cast<std::size_t>(r) * n + col] = 0.0;
            for (int c = col + 1; c < n; ++c)
                a[static_cast<std::size_t>(r) * n + c] -=
                    factor * a[static_cast<std::size_t>(col) * n + c];
            b[static_cast<std::size_t>(r)] -= factor * b[static_cast<std::size_t>(col)];
        }
    }
    std::vector<double> x(static_cast<std::size_t>(n), 0.0);
    for (int r = n - 1; r >= 0; --r) {
        double acc = b[static_cast<std::size_t>(r)];
        for (int c = r + 1; c < n; ++c)
            acc -= a[static_cast<std::size_t>(r) * n + c] * x[static_cast<std::size_t>(c)];
        x[static_cast<std::size_t>(r)] = acc / a[static_cast<std::size_t>(r) * n + r];
    }
    return x;
}

double l1_distance(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc;
}

double total_variation(const std::vector<double>& a, const std::vector<double>& b) {
    return 0.5 * l1_distance(a, b);
}

std::vector<double> random_distribution(Rng& rng, int n) {
    std::vector<double> p(static_cast<std::size_t>(n));
    double total = 0.0;
    for (double& x : p) {
        x = -std::log(1.0 - rng.uniform());  // Exp(1) => Dirichlet(1,...,1)
        total += x;
    }
    for (double& x : p) x /= total;
    return p;
}

// Distribution with strictly positive entries (softmax of Gaussian logits).
std::vector<double> positive_distribution(Rng& rng, int n, double spread) {
    std::vector<double> p(static_cast<std::size_t>(n));
    double m = -std::numeric_limits<double>::infinity();
    for (double& x : p) {
        x = spread * rng.normal();
        m = std::max(m, x);
    }
    double total = 0.0;
    for (double& x : p) {
        x = std::exp(x - m);
        total += x;
    }
    for (double& x : p) x /= total;
    return p;
}

// Renormalized perturbation of a distribution, keeping entries positive.
std::vector<double> perturb_distribution(Rng& rng, const std::vector<double>& base,
                                         double scale) {
    std::vector<double> p = base;
    double total = 0.0;
    for (double& x : p) {
        x = std::max(x + scale * rng.normal(), 1e-9);
        total += x;
    }
    for (double& x : p) x /= total;
    return p;
}

}  // namespace

double OccupancyTable::total() const {
    double acc = 0.0;
    for (const auto& row : d)
        for (double x : row) acc += x;
    return acc;
}

OccupancyTable discounted_occupancy(const TabularMDP& mdp, const PolicyTable& policy) {
    const int n = mdp.n_states;
    if (static_cast<int>(policy.size()) != n)
        throw std::invalid_argument("discounted_occupancy: policy size mismatch");
    for (const auto& row : policy) {
        if (static_cast<int>(row.size()) != mdp.n_actions)
            throw std::invalid_argument("discounted_occupancy: policy action mismatch");
        double total = 0.0;
        for (double p : row) {
            if (p < -1e-15) throw std::invalid_argument("discounted_occupancy: negative policy");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw std::invalid_argument("discounted_occupancy: policy row not a distribution");
    }

    // nu(s) = rho0(s) + gamma * sum_{s'} M(s', s) nu(s'),
    // M(s', s) = sum_a pi(a|s') P(s|s',a). Solve (I - gamma M^T) nu = rho0.
    std::vector<double> a(static_cast<std::size_t>(n) * n, 0.0);
    for (int s = 0; s < n; ++s) a[static_cast<std::size_t>(s) * n + s] = 1.0;
    for (int from = 0; from < n; ++from)
        for (int act = 0; act < mdp.n_actions; ++act) {
            const double pa = policy[static_cast<std::size_t>(from)][static_cast<std::size_t>(act)];
            if (pa == 0.0) continue;
            for (int to = 0; to < n; ++to)
                a[static_cast<std::size_t>(to) * n + from] -=
                    mdp.gamma * pa *
                    mdp.transition[static_cast<std::size_t>(from)][static_cast<std::size_t>(act)]
                                  [static_cast<std::size_t>(to)];
        }
    const std::vector<double> nu = solve_linear(std::move(a), mdp.initial);

    OccupancyTable occ;
    occ.d.assign(static_cast<std::size_t>(n), std::vector<double>(mdp.n_actions, 0.0));
    for (int s = 0; s < n; ++s)
        for (int act = 0; act < mdp.n_actions; ++act)
            occ.d[static_cast<std::size_t>(s)][static_cast<std::size_t>(act)] =
                (1.0 - mdp.gamma) * nu[static_cast<std::size_t>(s)] *
                policy[static_cast<std::size_t>(s)][static_cast<std::size_t>(act)];
    return occ;
}

double exact_return(const TabularMDP& mdp, const PolicyTable& policy) {
    const OccupancyTable occ = discounted_occupancy(mdp, policy);
    double j = 0.0;
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a)
            j += occ.d[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] *
                 mdp.reward[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)];
    return j;
}

PolicyTable LipschitzPolicyFamily::policy_for(const std::vector<double>& z) const {
    if (static_cast<int>(z.size()) != n_latent)
        throw std::invalid_argument("policy_for: latent dimension mismatch");
    PolicyTable pi(static_cast<std::size_t>(n_states),
                   std::vector<double>(static_cast<std::size_t>(n_actions), 0.0));
    std::vector<double> soft(static_cast<std::size_t>(n_actions));
    for (int s = 0; s < n_states; ++s) {
        for (int k = 0; k < n_latent; ++k) {
            double m = w(s, k, 0);
            for (int a = 1; a < n_actions; ++a) m = std::max(m, w(s, k, a));
            double total = 0.0;
            for (int a = 0; a < n_actions; ++a) {
                soft[static_cast<std::size_t>(a)] = std::exp(w(s, k, a) - m);
                total += soft[static_cast<std::size_t>(a)];
            }
            for (int a = 0; a < n_actions; ++a)
                pi[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] +=
                    z[static_cast<std::size_t>(k)] * soft[static_cast<std::size_t>(a)] / total;
        }
    }
    return pi;
}

double LipschitzPolicyFamily::compute_lipschitz_bound() {
    double worst = 0.0;
    for (std::size_t i = 0; i < latent_space.size(); ++i) {
        const PolicyTable pi_i = policy_for(latent_space[i]);
        for (std::size_t j = i + 1; j < latent_space.size(); ++j) {
            const double dz = l1_distance(latent_space[i], latent_space[j]);
            if (dz == 0.0) continue;
            const PolicyTable pi_j = policy_for(latent_space[j]);
            for (int s = 0; s < n_states; ++s)
                worst = std::max(worst, l1_distance(pi_i[static_cast<std::size_t>(s)],
                                                    pi_j[static_cast<std::size_t>(s)]) /
                                            dz);
        }
    }
    lipschitz_bound = worst;
    return worst;
}

bool LipschitzPolicyFamily::verify_certificate(double tol) const {
    for (std::size_t i = 0; i < latent_space.size(); ++i) {
        const PolicyTable pi_i = policy_for(latent_space[i]);
        for (std::size_t j = i + 1; j < latent_space.size(); ++j) {
            const PolicyTable pi_j = policy_for(latent_space[j]);
            const double dz = l1_distance(latent_space[i], latent_space[j]);
            for (int s = 0; s < n_states; ++s) {
                const double dpi = l1_distance(pi_i[static_cast<std::size_t>(s)],
                                               pi_j[static_cast<std::size_t>(s)]);
                if (dpi > lipschitz_bound * dz + tol) return false;
            }
        }
    }
    return true;
}

bool ReferenceRepresentation::supports_cover() const {
    for (std::size_t k = 0; k < z_mutual.size(); ++k)
        if (z_mutual[k] > 0.0 && (z_1[k] <= 0.0 || z_2[k] <= 0.0)) return false;
    return true;
}

double SweepConfig::kappa() const {
    return 2.0 * r_max / ((1.0 - gamma) * (1.0 - gamma));
}

namespace {

TabularMDP random_mdp(Rng& rng, int n_states, int n_actions, double gamma) {
    TabularMDP mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.gamma = gamma;
    mdp.transition.assign(static_cast<std::size_t>(n_states),
                          std::vector<std::vector<double>>(static_cast<std::size_t>(n_actions)));
    mdp.reward.assign(static_cast<std::size_t>(n_states),
                      std::vector<double>(static_cast<std::size_t>(n_actions), 0.0));
    for (int s = 0; s < n_states; ++s)
        for (int a = 0; a < n_actions; ++a) {
            mdp.transition[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] =
                random_distribution(rng, n_states);
            mdp.reward[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] =
                rng.uniform(-1.0, 1.0);
        }
    mdp.initial = random_distribution(rng, n_states);
    return mdp;
}

LipschitzPolicyFamily random_policy_family(Rng& rng, int n_states, int n_actions, int n_latent) {
    LipschitzPolicyFamily fam;
    fam.n_states = n_states;
    fam.n_actions = n_actions;
    fam.n_latent = n_latent;
    fam.weights.resize(static_cast<std::size_t>(n_states) * n_latent * n_actions);
    const double spread = rng.uniform(0.5, 2.5);
    for (double& x : fam.weights) x = spread * rng.normal();
    return fam;
}

}  // namespace

SweepConfig random_sweep_config(Rng& rng, bool for_perf_diff) {
    SweepConfig cfg;
    const int n_states = 2 + static_cast<int>(rng.index(5));   // 2..6
    const int n_actions = 2 + static_cast<int>(rng.index(2));  // 2..3
    const int n_latent = 3;
    const int n_tasks = 1 + static_cast<int>(rng.index(4));    // 1..4

    // Mix low and high discounts so the monotonicity condition is non-vacuous
    // on a useful fraction of Theorem-3 configs.
    cfg.gamma = rng.bernoulli(0.5) ? rng.uniform(0.1, 0.6) : rng.uniform(0.6, 0.95);

    cfg.policy_1 = random_policy_family(rng, n_states, n_actions, n_latent);
    cfg.policy_2 = random_policy_family(rng, n_states, n_actions, n_latent);
    if (for_perf_diff && rng.bernoulli(0.5)) {
        // Nearby policy tables keep eps_mutual small, exercising tight cases.
        cfg.policy_2 = cfg.policy_1;
        for (std::size_t i = 0; i < cfg.policy_2.weights.size(); ++i)
            cfg.policy_2.weights[i] += 0.05 * rng.normal();
    }

    double r_max = 0.0;
    const bool near_mutual = for_perf_diff && rng.bernoulli(0.4);
    for (int m = 0; m < n_tasks; ++m) {
        TheoryTask task;
        task.mdp = random_mdp(rng, n_states, n_actions, cfg.gamma);
        task.weight = 1.0;  // set below
        const int n_contexts = 1 + static_cast<int>(rng.index(3));
        for (int x = 0; x < n_contexts; ++x) {
            ReferenceRepresentation rep;
            rep.weight = 1.0;
            rep.z_mutual = rng.bernoulli(0.25)
                               ? random_distribution(rng, n_latent)  // may have tiny mass
                               : positive_distribution(rng, n_latent, 1.5);
            if (near_mutual) {
                const double scale = rng.uniform(0.0, 0.02) * (1.0 - cfg.gamma) * (1.0 - cfg.gamma);
                rep.z_2 = perturb_distribution(rng, rep.z_mutual, scale);
                rep.z_1 = perturb_distribution(rng, rep.z_2, scale);
            } else {
                rep.z_1 = positive_distribution(rng, n_latent, 1.5);
                rep.z_2 = positive_distribution(rng, n_latent, 1.5);
            }
            rep.z_star = positive_distribution(rng, n_latent, 1.5);
            task.contexts.push_back(std::move(rep));
        }
        // context weights
        const std::vector<double> wx = random_distribution(rng, n_contexts);
        for (int x = 0; x < n_contexts; ++x) task.contexts[static_cast<std::size_t>(x)].weight = wx[static_cast<std::size_t>(x)];
        r_max = std::max(r_max, task.mdp.reward_bound());
        cfg.tasks.push_back(std::move(task));
    }
    const std::vector<double> wm = random_distribution(rng, n_tasks);
    for (int m = 0; m < n_tasks; ++m) cfg.tasks[static_cast<std::size_t>(m)].weight = wm[static_cast<std::size_t>(m)];
    cfg.r_max = std::max(r_max, 1e-12);

    // Latent space = every representation vector the sweep will evaluate.
    std::vector<std::vector<double>> space;
    for (const auto& task : cfg.tasks)
        for (const auto& rep : task.contexts) {
            space.push_back(rep.z_star);
            space.push_back(rep.z_mutual);
            space.push_back(rep.z_1);
            space.push_back(rep.z_2);
        }
    cfg.policy_1.latent_space = space;
    cfg.policy_2.latent_space = space;
    const double l1 = cfg.policy_1.compute_lipschitz_bound();
    const double l2 = cfg.policy_2.compute_lipschitz_bound();
    // Theorem 3 compares policies from both tables under one constant.
    cfg.policy_1.lipschitz_bound = std::max(l1, l2);
    cfg.policy_2.lipschitz_bound = std::max(l1, l2);
    return cfg;
}

namespace {

// E_{m,x} of the per-(m,x) return under selector(z) through the chosen table.
template <typename Selector>
double expected_return(const SweepConfig& cfg, const LipschitzPolicyFamily& family,
                       Selector&& pick_z) {
    double acc = 0.0;
    for (const auto& task : cfg.tasks)
        for (const auto& rep : task.contexts)
            acc += task.weight * rep.weight *
                   exact_return(task.mdp, family.policy_for(pick_z(rep)));
    return acc;
}

template <typename Distance>
double expected_distance(const SweepConfig& cfg, Distance&& dist) {
    double acc = 0.0;
    for (const auto& task : cfg.tasks)
        for (const auto& rep : task.contexts) acc += task.weight * rep.weight * dist(rep);
    return acc;
}

}  // namespace

BoundCheck check_return_bound(const SweepConfig& cfg) {
    if (!cfg.policy_1.verify_certificate())
        throw std::runtime_error("check_return_bound: Lipschitz certificate failed");
    const double lz = cfg.policy_1.lipschitz_bound;
    const double j_star =
        expected_return(cfg, cfg.policy_1, [](const ReferenceRepresentation& r) { return r.z_star; });
    const double j_learned =
        expected_return(cfg, cfg.policy_1, [](const ReferenceRepresentation& r) { return r.z_1; });
    const double dist_term = expected_distance(cfg, [](const ReferenceRepresentation& r) {
        double acc = 0.0;
        for (std::size_t k = 0; k < r.z_mutual.size(); ++k) {
            acc += std::abs(r.z_1[k] - r.z_mutual[k]);
        }
        for (std::size_t k = 0; k < r.z_mutual.size(); ++k) {
            acc += std::abs(r.z_mutual[k] - r.z_star[k]);
        }
        return acc;
    });

    BoundCheck out;
    out.lhs = std::abs(j_star - j_learned);
    out.rhs = cfg.kappa() * lz * dist_term;
    out.margin = out.rhs - out.lhs;
    return out;
}

BoundCheck check_perf_diff_bound(const SweepConfig& cfg) {
    if (!cfg.policy_1.verify_certificate() || !cfg.policy_2.verify_certificate())
        throw std::runtime_error("check_perf_diff_bound: Lipschitz certificate failed");
    const double lz = cfg.policy_1.lipschitz_bound;
    const double kappa_lz = cfg.kappa() * lz;

    const double j2 =
        expected_return(cfg, cfg.policy_2, [](const ReferenceRepresentation& r) { return r.z_2; });
    const double j1 =
        expected_return(cfg, cfg.policy_1, [](const ReferenceRepresentation& r) { return r.z_1; });
    const double j_mut_2 = expected_return(
        cfg, cfg.policy_2, [](const ReferenceRepresentation& r) { return r.z_mutual; });
    const double j_mut_1 = expected_return(
        cfg, cfg.policy_1, [](const ReferenceRepresentation& r) { return r.z_mutual; });

    const double shift_term = expected_distance(cfg, [](const ReferenceRepresentation& r) {
        double d2m = 0.0;
        double d21 = 0.0;
        for (std::size_t k = 0; k < r.z_mutual.size(); ++k) {
            d2m += std::abs(r.z_2[k] - r.z_mutual[k]);
            d21 += std::abs(r.z_2[k] - r.z_1[k]);
        }
        return 2.0 * d2m + d21;
    });

    BoundCheck out;
    out.eps_mutual = j_mut_2 - j_mut_1;
    out.lhs = j2 - j1;
    out.rhs = out.eps_mutual - kappa_lz * shift_term;
    out.margin = out.lhs - out.rhs;  // lower bound: LHS must exceed RHS
    // Eq-(11) requirement, stated multiplicatively to avoid dividing by
    // kappa*L_z when the family is latent-degenerate.
    out.condition_holds = out.rhs > 0.0;
    out.improvement_holds = out.lhs > 0.0;
    return out;
}

namespace {

BoundReport run_sweep(const std::string& name, int n_configs, std::uint64_t seed,
                      const std::function<BoundCheck(Rng&)>& one_config,
                      int* condition_holds = nullptr, int* condition_improved = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    BoundReport report;
    report.sweep_name = name;
    report.seed = seed;
    report.n_configs = n_configs;
    report.margins.assign(static_cast<std::size_t>(n_configs), 0.0);
    std::vector<unsigned char> cond(static_cast<std::size_t>(n_configs), 0);
    std::vector<unsigned char> improved(static_cast<std::size_t>(n_configs), 0);

    detail::parallel_for(static_cast<std::size_t>(n_configs), [&](std::size_t i) {
        Rng rng = Rng::derive(seed, i);
        const BoundCheck check = one_config(rng);
        report.margins[i] = check.margin;
        cond[i] = check.condition_holds ? 1 : 0;
        improved[i] = check.improvement_holds ? 1 : 0;
    });

    report.min_margin = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n_configs; ++i) {
        const double m = report.margins[static_cast<std::size_t>(i)];
        report.min_margin = std::min(report.min_margin, m);
        if (m < -kMarginTolerance) ++report.n_violations;
        if (cond[static_cast<std::size_t>(i)]) {
            ++report.n_condition_holds;
            if (improved[static_cast<std::size_t>(i)]) ++report.n_condition_and_improved;
        }
    }
    if (condition_holds) *condition_holds = report.n_condition_holds;
    if (condition_improved) *condition_improved = report.n_condition_and_improved;
    report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return report;
}

}  // namespace

bool BoundReport::passed() const {
    if (n_violations != 0) return false;
    // Theorem-3 sweeps additionally require condition => improvement.
    return n_condition_and_improved == n_condition_holds;
}

BoundReport verify_return_bound(int n_configs, std::uint64_t seed) {
    return run_sweep("return_bound", n_configs, seed, [](Rng& rng) {
        const SweepConfig cfg = random_sweep_config(rng, false);
        return check_return_bound(cfg);
    });
}

BoundReport verify_perf_diff_bound(int n_configs, std::uint64_t seed) {
    return run_sweep("perf_diff_bound", n_configs, seed, [](Rng& rng) {
        SweepConfig cfg = random_sweep_config(rng, true);
        BoundCheck check = check_perf_diff_bound(cfg);
        int guard = 0;
        while (check.eps_mutual <= 0.0) {
            // Rejection step: swap update order; exact ties regenerate.
            if (check.eps_mutual < 0.0) {
                std::swap(cfg.policy_1, cfg.policy_2);
                for (auto& task : cfg.tasks)
                    for (auto& rep : task.contexts) std::swap(rep.z_1, rep.z_2);
            } else {
                cfg = random_sweep_config(rng, true);
            }
            check = check_perf_diff_bound(cfg);
            if (++guard > 64)
                throw std::runtime_error("verify_perf_diff_bound: rejection loop stuck");
        }
        return check;
    });
}

BoundReport lemma_a1_check(int n_configs, std::uint64_t seed) {
    return run_sweep("lemma_a1", n_configs, seed, [](Rng& rng) {
        const int n_states = 2 + static_cast<int>(rng.index(5));
        const int n_actions = 2 + static_cast<int>(rng.index(2));
        const double gamma = rng.uniform(0.1, 0.95);

        TabularMDP m1 = random_mdp(rng, n_states, n_actions, gamma);
        TabularMDP m2 = m1;
        if (!rng.bernoulli(0.2)) {  // occasionally identical models
            for (int s = 0; s < n_states; ++s)
                for (int a = 0; a < n_actions; ++a)
                    m2.transition[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] =
                        random_distribution(rng, n_states);
        }
        // shared reward table: the lemma bounds dynamics and policy gaps only
        PolicyTable pi1(static_cast<std::size_t>(n_states));
        for (auto& row : pi1) row = random_distribution(rng, n_actions);
        PolicyTable pi2 = pi1;
        if (!rng.bernoulli(0.2)) {
            for (auto& row : pi2) row = random_distribution(rng, n_actions);
        }

        double eps_pi = 0.0;
        for (int s = 0; s < n_states; ++s)
            eps_pi = std::max(eps_pi, total_variation(pi1[static_cast<std::size_t>(s)],
                                                      pi2[static_cast<std::size_t>(s)]));
        const OccupancyTable occ = discounted_occupancy(m1, pi1);
        double eps_model = 0.0;
        for (int s = 0; s < n_states; ++s)
            for (int a = 0; a < n_actions; ++a)
                eps_model +=
                    occ.d[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)] *
                    total_variation(
                        m1.transition[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)],
                        m2.transition[static_cast<std::size_t>(s)][static_cast<std::size_t>(a)]);

        const double r_max = std::max(m1.reward_bound(), 1e-12);
        const double denom = (1.0 - gamma) * (1.0 - gamma);

        BoundCheck out;
        out.lhs = std::abs(exact_return(m2, pi2) - exact_return(m1, pi1));
        out.rhs = 2.0 * r_max * (eps_pi / denom + gamma * eps_model / denom);
        out.margin = out.rhs - out.lhs;
        return out;
    });
}

WeissmanResult verify_weissman(int alphabet_size, int m, double eps, int n_trials,
                               std::uint64_t seed) {
    if (alphabet_size < 2) throw std::invalid_argument("verify_weissman: alphabet_size >= 2");
    if (m < 1) throw std::invalid_argument("verify_weissman: m >= 1");
    if (n_trials < 1) throw std::invalid_argument("verify_weissman: n_trials >= 1");

    WeissmanResult out;
    out.alphabet_size = alphabet_size;
    out.n_samples = m;
    out.epsilon = eps;
    out.n_trials = n_trials;
    out.analytic_bound = (std::pow(2.0, alphabet_size) - 2.0) * std::exp(-m * eps * eps / 2.0);

    const double p_uniform = 1.0 / alphabet_size;
    std::vector<long> failures_per_chunk;
    const std::size_t n_chunks = 64;
    failures_per_chunk.assign(n_chunks, 0);
    const int per_chunk = (n_trials + static_cast<int>(n_chunks) - 1) / static_cast<int>(n_chunks);

    detail::parallel_for(n_chunks, [&](std::size_t chunk) {
        Rng rng = Rng::derive(seed, 0x77650000ULL + chunk);
        const int begin = static_cast<int>(chunk) * per_chunk;
        const int end = std::min(n_trials, begin + per_chunk);
        std::vector<long> counts(static_cast<std::size_t>(alphabet_size));
        long failures = 0;
        for (int trial = begin; trial < end; ++trial) {
            std::fill(counts.begin(), counts.end(), 0L);
            for (int i = 0; i < m; ++i) {
                const auto sym = static_cast<std::size_t>(rng.uniform() * alphabet_size);
                ++counts[std::min(sym, static_cast<std::size_t>(alphabet_size - 1))];
            }
            double l1 = 0.0;
            for (long c : counts)
                l1 += std::abs(static_cast<double>(c) / m - p_uniform);
            if (l1 >= eps) ++failures;
        }
        failures_per_chunk[chunk] = failures;
    });

    long failures = 0;
    for (long f : failures_per_chunk) failures += f;
    out.empirical_rate = static_cast<double>(failures) / n_trials;
    const double p_clip = std::min(out.analytic_bound, 1.0);
    out.binomial_sigma = std::sqrt(std::max(p_clip * (1.0 - p_clip), 0.0) / n_trials);
    out.ok = out.empirical_rate <= out.analytic_bound + 3.0 * out.binomial_sigma;
    return out;
}

void CorollaryConfig::validate() const {
    if (r_max <= 0.0) throw std::invalid_argument("CorollaryConfig: R_max must be positive");
    if (gamma < 0.0 || gamma >= 1.0)
        throw std::invalid_argument("CorollaryConfig: gamma must lie in [0,1)");
    if (l_z <= 0.0) throw std::invalid_argument("CorollaryConfig: L_z must be positive");
    if (beta < 0.0) throw std::invalid_argument("CorollaryConfig: beta must be >= 0");
    if (vol_z < 2) throw std::invalid_argument("CorollaryConfig: vol_Z must be >= 2");
    if (xi <= 0.0 || xi >= 1.0) throw std::invalid_argument("CorollaryConfig: xi must lie in (0,1)");
    if (n_pretrain < 0) throw std::invalid_argument("CorollaryConfig: N must be >= 0");
    if (eps_mutual <= kappa() * l_z * beta)
        throw std::invalid_argument(
            "CorollaryConfig: infeasible, eps_mutual must exceed kappa*L_z*beta");
}

CorollaryK corollary_k(const CorollaryConfig& config) {
    config.validate();
    const double kappa = config.kappa();
    const double gap = config.eps_mutual - kappa * config.l_z * config.beta;
    const double log_term =
        std::log((std::pow(2.0, config.vol_z) - 2.0) / config.xi);
    CorollaryK out;
    out.k = 8.0 * kappa * kappa * config.l_z * config.l_z / (gap * gap) * log_term -
            static_cast<double>(config.n_pretrain);
    out.k_ceil = static_cast<long>(std::ceil(out.k));
    out.k_needed = std::max(out.k, 0.0);
    return out;
}

CorollaryVerification verify_corollary(const CorollaryConfig& config, int n_trials,
                                       std::uint64_t seed) {
    config.validate();
    if (n_trials < 1) throw std::invalid_argument("verify_corollary: n_trials >= 1");
    const double denom = (1.0 - config.gamma) * (1.0 - config.gamma);
    const double epsilon_target =
        denom * config.eps_mutual / (4.0 * config.r_max * config.l_z) - config.beta / 2.0;
    if (epsilon_target <= 0.0)
        throw std::invalid_argument("verify_corollary: infeasible epsilon target");

    const CorollaryK k = corollary_k(config);
    const long samples = config.n_pretrain + k.k_ceil;
    if (samples < 1)
        throw std::invalid_argument("verify_corollary: N + ceil(k) must be >= 1");

    const int vol = config.vol_z;
    const double p_uniform = 1.0 / vol;
    std::vector<long> success_per_chunk;
    const std::size_t n_chunks = 64;
    success_per_chunk.assign(n_chunks, 0);
    const int per_chunk = (n_trials + static_cast<int>(n_chunks) - 1) / static_cast<int>(n_chunks);

    detail::parallel_for(n_chunks, [&](std::size_t chunk) {
        Rng rng = Rng::derive(seed, 0xc0500000ULL + chunk);
        const int begin = static_cast<int>(chunk) * per_chunk;
        const int end = std::min(n_trials, begin + per_chunk);
        std::vector<long> counts(static_cast<std::size_t>(vol));
        long successes = 0;
        for (int trial = begin; trial < end; ++trial) {
            std::fill(counts.begin(), counts.end(), 0L);
            for (long i = 0; i < samples; ++i) {
                const auto sym = static_cast<std::size_t>(rng.uniform() * vol);
                ++counts[std::min(sym, static_cast<std::size_t>(vol - 1))];
            }
            double l1 = 0.0;
            for (long c : counts)
                l1 += std::abs(static_cast<double>(c) / static_cast<double>(samples) - p_uniform);
            if (l1 <= epsilon_target) ++successes;
        }
        success_per_chunk[chunk] = successes;
    });

    long successes = 0;
    for (long s : success_per_chunk) successes += s;

    CorollaryVerification out;
    out.success_rate = static_cast<double>(successes) / n_trials;
    out.required_rate = 1.0 - config.xi;
    out.epsilon_target = epsilon_target;
    out.samples_per_trial = samples;
    out.n_trials = n_trials;
    out.ok = out.success_rate >= out.required_rate;
    return out;
}

void write_report_json(const std::string& path, const BoundReport& report) {
    nlohmann::json j;
    j["sweep"] = report.sweep_name;
    j["seed"] = report.seed;
    j["n_configs"] = report.n_configs;
    j["n_violations"] = report.n_violations;
    j["min_margin"] = report.min_margin;
    j["runtime_seconds"] = report.runtime_seconds;
    j["passed"] = report.passed();
    j["margin_tolerance"] = kMarginTolerance;
    if (report.n_condition_holds > 0 || report.sweep_name == "perf_diff_bound") {
        j["condition_holds"] = report.n_condition_holds;
        j["condition_and_improved"] = report.n_condition_and_improved;
    }

    // digest of the sweep identity (not of the margins)
    std::uint64_t digest = 1469598103934665603ULL;
    auto mix = [&digest](std::uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            digest ^= (v >> (8 * i)) & 0xff;
            digest *= 1099511628211ULL;
        }
    };
    for (char c : report.sweep_name) mix(static_cast<std::uint64_t>(c));
    mix(report.seed);
    mix(static_cast<std::uint64_t>(report.n_configs));
    char digest_hex[32];
    std::snprintf(digest_hex, sizeof(digest_hex), "%016llx",
                  static_cast<unsigned long long>(digest));
    j["config_digest"] = digest_hex;

    if (!report.margins.empty()) {
        const auto [lo_it, hi_it] = std::minmax_element(report.margins.begin(), report.margins.end());
        const double lo = *lo_it;
        const double hi = *hi_it;
        const int n_buckets = 10;
        std::vector<long> buckets(n_buckets, 0);
        const double width = hi > lo ? (hi - lo) / n_buckets : 1.0;
        for (double m : report.margins) {
            int b = static_cast<int>((m - lo) / width);
            b = std::clamp(b, 0, n_buckets - 1);
            ++buckets[static_cast<std::size_t>(b)];
        }
        j["margins_histogram"] = {{"min", lo}, {"max", hi}, {"buckets", buckets}};
    }

    std::ofstream file(path, std::ios::trunc);
    if (!file) throw std::runtime_error("write_report_json: cannot open " + path);
    file << j.dump(2) << "\n";
}

}  // namespace comrl::theorylab
