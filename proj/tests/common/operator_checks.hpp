#pragma once

// Randomised checks of the inequalities satisfied by the nonlinear branching
// operator G and the pair functional V of a finite-type model. Shared by the
// unit tests and the acceptance runner.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mbp/finite_model.hpp"
#include "mbp/rng.hpp"

namespace mbp::testing {

struct OperatorCheckReport {
    int trials = 0;
    std::vector<std::string> failures;  ///< first few violations, human readable
    int violations = 0;

    bool ok() const { return violations == 0; }
};

inline Eigen::VectorXd random_function(int d, double hi, RngStream& rng) {
    Eigen::VectorXd h(d);
    for (int i = 0; i < d; ++i) h[i] = rng.uniform(0.0, hi);
    // Hit the corners now and then; the bounds are tight there.
    if (rng.uniform() < 0.1) h[static_cast<int>(rng() % static_cast<std::uint32_t>(d))] = hi;
    return h;
}

inline Eigen::VectorXd pair_functional(const FiniteTypeModel& m, const Eigen::VectorXd& h) {
    return variance_functional(m, h, h);
}

/// Runs `trials` random functions through each of the four inequalities.
inline OperatorCheckReport check_operator_inequalities(const FiniteTypeModel& m, int trials, std::uint64_t seed) {
    OperatorCheckReport rep;
    rep.trials = trials;
    const int d = m.types();
    double gamma_max = 0.0, m_max = 0.0;
    for (int i = 0; i < d; ++i) {
        gamma_max = std::max(gamma_max, m.gamma(i));
        m_max = std::max(m_max, m.m_scalar(i));
    }
    const double n_max = static_cast<double>(m.n_max());
    // Roundoff allowance: the operators are sums of O(n_max) products of numbers in [0, 1].
    const double eps = 1e-13 * std::max(1.0, gamma_max * n_max * n_max);

    auto fail = [&](const std::string& what) {
        ++rep.violations;
        if (rep.failures.size() < 5) rep.failures.push_back(what);
    };

    RngStream rng(seed, 0);
    for (int trial = 0; trial < trials; ++trial) {
        const std::string tag = m.name() + " trial " + std::to_string(trial) + ": ";

        // (i) h in [0, 1]: 0 >= G[h] >= -max gamma max m.
        const Eigen::VectorXd h1 = random_function(d, 1.0, rng);
        const Eigen::VectorXd g1 = nonlinear_branching_term(m, h1);
        for (int i = 0; i < d; ++i)
            if (g1[i] > eps || g1[i] < -gamma_max * m_max - eps) fail(tag + "G[h] outside [-max gamma max m, 0]");

        // (iii) h in [0, 1/2]: -G[h] >= 2^(1 - n_max) gamma V[h] >= 0.
        const Eigen::VectorXd h3 = random_function(d, 0.5, rng);
        const Eigen::VectorXd g3 = nonlinear_branching_term(m, h3);
        const Eigen::VectorXd v3 = pair_functional(m, h3);
        const double c = std::pow(2.0, 1.0 - n_max);
        for (int i = 0; i < d; ++i) {
            const double lower = c * m.gamma(i) * v3[i];
            if (lower < -eps) fail(tag + "V[h] negative");
            if (-g3[i] < lower - eps) fail(tag + "-G[h] below 2^(1-n_max) gamma V[h]");
        }

        // (ii) sup h <= 1/4: the residual G + gamma V / 2 is cubic, so halving h divides it by 8.
        const Eigen::VectorXd h2 = random_function(d, 0.25, rng);
        auto residual = [&](const Eigen::VectorXd& h) {
            const Eigen::VectorXd g = nonlinear_branching_term(m, h);
            const Eigen::VectorXd v = pair_functional(m, h);
            double r = 0.0;
            for (int i = 0; i < d; ++i) r = std::max(r, std::abs(g[i] + 0.5 * m.gamma(i) * v[i]));
            return r;
        };
        const double r_full = residual(h2), r_half = residual(0.5 * h2);
        if (r_half > r_full / 8.0 * 1.2 + eps) fail(tag + "residual did not decay cubically");

        // (iv) V is Lipschitz with constant 2 n_max^2 in the sup norm on [0, 1].
        const Eigen::VectorXd a = random_function(d, 1.0, rng), b = random_function(d, 1.0, rng);
        const double dist = (a - b).cwiseAbs().maxCoeff();
        const Eigen::VectorXd va = pair_functional(m, a), vb = pair_functional(m, b);
        for (int i = 0; i < d; ++i)
            if (std::abs(va[i] - vb[i]) > 2.0 * n_max * n_max * dist + eps) fail(tag + "V not 2 n_max^2 Lipschitz");
    }
    return rep;
}

}  // namespace mbp::testing
