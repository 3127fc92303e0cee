#pragma once

// Exact finite-horizon occupation moments of the spine type chain of a
// two-type model. The spine jumps i -> j at rate gamma_i M_ij phi_j / phi_i,
// so E[A] and E[A^2] for A = t^{-1} int_0^t 1{Y_s = 0} ds follow from the
// two-state transition function p(s) = pi + (1 - pi) e^{-c s}.

#include <Eigen/Dense>

#include <cmath>

#include "mbp/eigen.hpp"
#include "mbp/finite_model.hpp"

namespace mbp::testing {

struct OccupationMoments {
    double first = 0.0;   ///< E[A] from type 0
    double second = 0.0;  ///< E[A^2] from type 0
};

inline OccupationMoments two_state_occupation(const FiniteTypeModel& model, const EigenTriple& eigen, double t) {
    const Eigen::VectorXd e1 = Eigen::VectorXd::Unit(2, 1), e0 = Eigen::VectorXd::Unit(2, 0);
    const double a = model.rate(0) * offspring_mean(model, e1)[0] * eigen.phi[1] / eigen.phi[0];
    const double b = model.rate(1) * offspring_mean(model, e0)[1] * eigen.phi[0] / eigen.phi[1];
    const double c = a + b, pi = b / c;
    const auto p = [&](double s) { return pi + (1.0 - pi) * std::exp(-c * s); };
    const auto cum = [&](double s) { return pi * s + (1.0 - pi) * (1.0 - std::exp(-c * s)) / c; };

    OccupationMoments m;
    m.first = cum(t) / t;
    // E[A^2] = 2 t^{-2} int_0^t p(s) P(t - s) ds with P the integral of p.
    constexpr int kSteps = 20000;
    const double h = t / kSteps;
    double sum = 0.0;
    for (int k = 0; k <= kSteps; ++k) {
        const double s = k * h;
        const double w = (k == 0 || k == kSteps) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
        sum += w * p(s) * cum(t - s);
    }
    m.second = 2.0 * (sum * h / 3.0) / (t * t);
    return m;
}

}  // namespace mbp::testing
