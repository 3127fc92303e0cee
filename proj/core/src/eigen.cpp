#include "mbp/eigen.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

#include "mbp/error.hpp"
#include "mbp/linalg.hpp"

namespace mbp {

namespace {

/// Largest real part among the eigenvalues of diag(gamma) (k M - I).
double leading_real_eigenvalue(const Eigen::MatrixXd& m, const Eigen::VectorXd& gamma, double k) {
    const Eigen::Index d = m.rows();
    Eigen::MatrixXd a = k * m - Eigen::MatrixXd::Identity(d, d);
    for (Eigen::Index i = 0; i < d; ++i) a.row(i) *= gamma[i];
    Eigen::EigenSolver<Eigen::MatrixXd> solver(a, false);
    if (solver.info() != Eigen::Success) throw ConvergenceError("calibrate_critical: eigenvalue solver failed");
    return solver.eigenvalues().real().maxCoeff();
}

}  // namespace

EigenTriple exact_eigen(const FiniteTypeModel& model, int max_iterations) {
    const int d = model.types();
    const Eigen::MatrixXd a = model.generator();
    const double gmax = *std::max_element(model.rates().begin(), model.rates().end());
    const Eigen::MatrixXd p = expm(a / gmax);
    const double scale = std::max(1.0, a.cwiseAbs().rowwise().sum().maxCoeff());
    const double target = 1e-12 * scale;

    const auto rayleigh = [&](const Eigen::VectorXd& v) { return v.dot(a * v) / v.dot(v); };

    Eigen::VectorXd v = Eigen::VectorXd::Ones(d);
    Eigen::VectorXd u = Eigen::VectorXd::Ones(d);
    bool right_done = false, left_done = false;
    for (int it = 0; it < max_iterations && !(right_done && left_done); ++it) {
        if (!right_done) {
            v = p * v;
            v /= v.cwiseAbs().maxCoeff();
            right_done = (a * v - rayleigh(v) * v).cwiseAbs().maxCoeff() <= target;
        }
        if (!left_done) {
            u = p.transpose() * u;
            u /= u.cwiseAbs().maxCoeff();
            const double lu = u.dot(a.transpose() * u) / u.dot(u);
            left_done = (a.transpose() * u - lu * u).cwiseAbs().maxCoeff() <= target;
        }
    }
    if (!right_done || !left_done)
        throw ConvergenceError("exact_eigen: power iteration did not converge (reducible model or complex leading pair?)");
    if (v.minCoeff() <= 0.0 || u.minCoeff() < 0.0)
        throw ConvergenceError("exact_eigen: leading eigenvector is not positive");

    EigenTriple e;
    e.exact = true;
    e.lambda = u.dot(a * v) / u.dot(v);
    e.phi_tilde = u / u.sum();
    e.phi = v / e.phi_tilde.dot(v);
    e.normalization = e.phi_tilde.dot(e.phi);
    e.right_residual = (a * e.phi - e.lambda * e.phi).cwiseAbs().maxCoeff();
    e.left_residual = (a.transpose() * e.phi_tilde - e.lambda * e.phi_tilde).cwiseAbs().maxCoeff();
    const Eigen::VectorXd vphi = variance_functional(model, e.phi, e.phi);
    e.sigma = 0.0;
    for (int i = 0; i < d; ++i) e.sigma += e.phi_tilde[i] * model.rate(i) * vphi[i];
    return e;
}

Calibration<FiniteTypeModel> calibrate_critical(const FiniteTypeModel& model, double tol) {
    if (!(tol > 0.0)) throw RangeError("calibrate_critical: tolerance must be positive");
    const Eigen::MatrixXd m = model.mean_matrix();
    const Eigen::VectorXd gamma = Eigen::Map<const Eigen::VectorXd>(model.rates().data(), model.types());
    const auto lam = [&](double k) { return leading_real_eigenvalue(m, gamma, k); };

    double k = 1.0;
    int iterations = 0;
    if (std::abs(lam(1.0)) > tol) {
        double lo = 0.1, hi = 10.0;
        const double flo = lam(lo), fhi = lam(hi);
        if (!(flo < 0.0 && fhi > 0.0))
            throw ConvergenceError("calibrate_critical: lambda does not change sign on [0.1, 10]");
        for (;;) {
            k = 0.5 * (lo + hi);
            ++iterations;
            const double f = lam(k);
            if (std::abs(f) <= tol) break;
            if (f < 0.0) lo = k;
            else hi = k;
            if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * hi) break;
        }
    }
    Calibration<FiniteTypeModel> out{k == 1.0 ? model : model.with_yield_multiplier(k), k, {}, iterations, {}};
    out.eigen = exact_eigen(out.model);
    out.bisection_lambda = {out.eigen.lambda, 0.0, 0};
    if (std::abs(out.eigen.lambda) > tol)
        throw ConvergenceError("calibrate_critical: calibrated lambda " + std::to_string(out.eigen.lambda) +
                               " above tolerance");
    return out;
}

}  // namespace mbp
