#pragma once

// Leading eigen-elements (lambda, phi, phi_tilde) of the mean semigroup, the
// variance constant Sigma, and calibration of a yield multiplier to criticality.

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>

#include "mbp/finite_model.hpp"
#include "mbp/nbp.hpp"
#include "mbp/parallel.hpp"

namespace mbp {

/// Equal-volume partition of D x V into spatial bins x speed bins x direction bins.
///
/// Ball: spatial coordinate (|r|/R)^3, direction coordinate mu = r_hat . v_hat.
/// Box: spatial coordinate along x, direction coordinate v_x / |v|.
/// Speed coordinate: (|v|^3 - v_min^3) / (v_max^3 - v_min^3).
/// With these coordinates a uniform point of D x V is uniform on the unit cube,
/// so every cell has the same phase-space volume.
struct PhaseGrid {
    Geometry geometry = Geometry::ball(1.0);
    double v_min = 1.0, v_max = 1.0;
    int n_space = 4, n_speed = 2, n_dir = 4;

    static PhaseGrid for_model(const NbpModel& model, int n_space = 4, int n_speed = 2, int n_dir = 4);

    int cells() const noexcept { return n_space * n_speed * n_dir; }
    double cell_volume() const noexcept;
    int cell_of(const PhasePoint& x) const noexcept;
    PhasePoint sample_in_cell(int cell, RngStream& rng) const;
    std::string describe() const;
};

struct EigenTriple {
    double lambda = 0.0;
    double lambda_se = 0.0;
    Eigen::VectorXd phi;        ///< per type, or per grid cell
    Eigen::VectorXd phi_tilde;  ///< per type (sums to 1), or density per grid cell
    double sigma = 0.0;
    double sigma_se = 0.0;
    double normalization = 1.0;  ///< achieved <phi_tilde, phi>
    double right_residual = 0.0;  ///< ||A phi - lambda phi||_inf (finite models)
    double left_residual = 0.0;   ///< ||phi_tilde A - lambda phi_tilde||_inf (finite models)
    bool exact = true;
    std::optional<PhaseGrid> grid;

    double phi_at(int type) const { return phi[type]; }
    double phi_at(const PhasePoint& x) const { return phi[grid->cell_of(x)]; }
};

/// Perron-Frobenius triple of a finite-type model by power iteration on exp(A tau),
/// tau = 1 / max gamma, to a residual of 1e-12. Normalised so that phi_tilde sums
/// to 1 and <phi_tilde, phi> = 1. Sigma = sum_i phi_tilde_i gamma_i V[phi](i).
EigenTriple exact_eigen(const FiniteTypeModel& model, int max_iterations = 100000);

struct NbpEigenOptions {
    double t_probe = 6.0;
    double delta = 2.0;                 ///< lambda is estimated from t_probe to t_probe + delta
    std::size_t walks_per_cell = 2000;  ///< for phi
    std::size_t walks_tilde = 200000;   ///< for phi_tilde and lambda
    std::size_t sigma_samples = 200000;
    double max_cell_rel_se = 0.5;
};

/// Grid estimate of the eigen-elements of an NBP. Throws StatisticsError if a
/// cell's relative standard error exceeds max_cell_rel_se.
EigenTriple estimate_eigen_nbp(const NbpModel& model, const PhaseGrid& grid, const NbpEigenOptions& options,
                               std::uint64_t seed, const WorkerPool& pool);

/// lambda_hat = log(psi_{t+delta}[1] / psi_t[1]) / delta from walks started uniformly
/// in D x V, with both times read off the same walks.
Estimate estimate_lambda_nbp(const NbpModel& model, double t_probe, double delta, std::size_t n, std::uint64_t seed,
                             const WorkerPool& pool);

/// Sigma for a fission law given (phi, phi_tilde) on a grid: samples phase points
/// from phi_tilde and averages sigma_f sum_{i != j} phi(v_i) phi(v_j).
Estimate estimate_sigma_nbp(const NbpModel& model, const EigenTriple& eigen, std::size_t n, std::uint64_t seed,
                            const WorkerPool& pool);

/// Necessary condition for the non-degeneracy assumption on the pair functional:
/// <phi_tilde, sigma_f VV[g]> > 0 for `count` random positive grid functions g.
/// Returns the smallest estimate found.
double sampled_pair_condition(const NbpModel& model, const EigenTriple& eigen, int count, std::size_t n,
                              std::uint64_t seed, const WorkerPool& pool);

template <class Model>
struct Calibration {
    Model model;
    double multiplier = 1.0;
    EigenTriple eigen;
    int iterations = 0;
    /// Lambda at the returned multiplier as seen by the bisection itself.
    Estimate bisection_lambda;
};

/// Bisection on the yield multiplier in [0.1, 10] until |lambda| <= tol (default 1e-10).
Calibration<FiniteTypeModel> calibrate_critical(const FiniteTypeModel& model, double tol = 1e-10);

struct NbpCalibrationOptions {
    double tol = 0.01;
    /// Walks per lambda evaluation near the root; far from it a prefix of
    /// walks / 16 of the same streams decides the sign when it is 4 SE clear.
    std::size_t walks = 2000000;
    int max_iterations = 60;
    std::optional<PhaseGrid> grid;  ///< defaults to PhaseGrid::for_model(model)
    NbpEigenOptions eigen;
};

/// Bisection on the yield multiplier with a common-random-number lambda estimate.
/// Stops when |lambda_hat| <= tol and either the bracket has shrunk below 1e-4
/// relative or |lambda_hat| is below a quarter of its standard error, then
/// estimates the full triple of the calibrated model. Throws StatisticsError when
/// the standard error of lambda_hat itself exceeds tol / 2, since the stopping
/// rule would then certify nothing.
Calibration<NbpModel> calibrate_critical(const NbpModel& model, const NbpCalibrationOptions& options,
                                         std::uint64_t seed, const WorkerPool& pool);

}  // namespace mbp
