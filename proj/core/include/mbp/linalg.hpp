#pragma once

#include <Eigen/Dense>

#include <functional>

namespace mbp {

/// Matrix exponential by scaling and squaring with a degree-13 Pade approximant.
Eigen::MatrixXd expm(const Eigen::MatrixXd& a);

/// Componentwise adaptive Simpson quadrature of a vector-valued integrand.
///
/// Stops a panel when every component satisfies |S2 - S1| <= 15 * tol * max(|S2|, floor).
/// Throws ConvergenceError if the recursion depth reaches max_depth.
Eigen::VectorXd adaptive_simpson(const std::function<Eigen::VectorXd(double)>& f, double a, double b,
                                 double rel_tol = 1e-8, int max_depth = 50);

/// Scalar convenience wrapper.
double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double rel_tol = 1e-10,
                        int max_depth = 50);

}  // namespace mbp
