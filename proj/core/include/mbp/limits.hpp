#pragma once

// Experiment layer: survival curves and the Kolmogorov limit, conditioned
// Laplace transforms and moments for the Yaglom limit, martingale-moment
// tables, and the a(t) asymptotics of the survival ODE.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mbp/branching.hpp"
#include "mbp/eigen.hpp"
#include "mbp/error.hpp"
#include "mbp/finite_model.hpp"
#include "mbp/parallel.hpp"
#include "mbp/spine.hpp"
#include "mbp/stats.hpp"

namespace mbp {

/// One row of a result table. `target` and `rel_err` are NaN when there is no target.
struct TableRow {
    std::string param;
    double estimate = 0.0;
    double se = 0.0;
    double target = std::nan("");
    double rel_err = std::nan("");
    std::size_t n_effective = 0;
};

struct EstimateTable {
    std::string title;
    std::vector<TableRow> rows;
    std::size_t trajectories = 0;
    std::size_t survivors = 0;  ///< conditioning count, 0 for unconditioned tables
    std::vector<std::string> warnings;

    void add(std::string param, const Estimate& e, std::optional<double> target = std::nullopt);
    /// Header plus one line per row, 17 significant digits, '\n' endings.
    /// A missing target or relative error is an empty field.
    std::string to_csv() const;
};

/// Formats a double with 17 significant digits independently of the locale.
std::string format_g17(double x);

struct SurvivalCurve {
    std::vector<double> times;
    std::vector<Estimate> survival;    ///< p_hat(t_k)
    std::size_t n = 0;
    std::optional<double> limit;       ///< 2 phi(x0) / Sigma

    /// t_k p_hat(t_k) with its standard error.
    Estimate scaled(std::size_t k) const;
    /// Rows of t p_hat(t) against the Kolmogorov constant.
    EstimateTable to_table() const;
};

namespace detail {

void check_time_grid(std::span<const double> grid);
std::optional<double> kolmogorov_limit(const EigenTriple* eigen, double phi_x0);

}  // namespace detail

/// Survival fractions from n direct trajectories run to the last grid time.
/// Each trajectory's extinction time answers every grid point.
template <BranchingModel M>
SurvivalCurve survival_curve_direct(const M& model, const typename M::State& x0, std::span<const double> grid,
                                    std::size_t n, std::uint64_t seed, const WorkerPool& pool,
                                    const EigenTriple* eigen = nullptr) {
    detail::check_time_grid(grid);
    if (n < 2) throw RangeError("survival_curve: need at least two trajectories");
    SurvivalCurve curve;
    curve.times.assign(grid.begin(), grid.end());
    curve.n = n;
    if (eigen != nullptr) curve.limit = detail::kolmogorov_limit(eigen, eigen->phi_at(x0));
    const double t_max = grid.back();
    std::vector<ExtinctionTime> ext;
    if (t_max > 0.0) ext = sample_extinction(model, x0, t_max, n, seed, pool);
    std::vector<double> alive(n);
    for (double t : grid) {
        if (t == 0.0) {
            curve.survival.push_back({1.0, 0.0, n});
            continue;
        }
        for (std::size_t i = 0; i < n; ++i) alive[i] = ext[i].survives(t) ? 1.0 : 0.0;
        curve.survival.push_back(mean_estimate(alive));
    }
    return curve;
}

/// Survival via phi(x0) / <phi, X_t> under the spine measure; grid point k uses
/// seed mix_seed(seed + k).
template <SpineKernel K>
SurvivalCurve survival_curve_spine(const K& kernel, const EigenTriple& eigen, const typename K::State& x0,
                                   std::span<const double> grid, std::size_t n, std::uint64_t seed,
                                   const WorkerPool& pool) {
    detail::check_time_grid(grid);
    SurvivalCurve curve;
    curve.times.assign(grid.begin(), grid.end());
    curve.n = n;
    curve.limit = detail::kolmogorov_limit(&eigen, kernel.phi(x0));
    for (std::size_t k = 0; k < grid.size(); ++k)
        curve.survival.push_back(survival_via_spine(kernel, x0, grid[k], n, mix_seed(seed + k), pool));
    return curve;
}

/// Values of <f, X_t> / t for the surviving trajectories among n, in stream order.
template <BranchingModel M, class F>
std::vector<double> conditioned_sample(const M& model, const typename M::State& x0, double t, F&& f, std::size_t n,
                                       std::uint64_t seed, const WorkerPool& pool) {
    const auto s = sample_functional(model, x0, t, f, n, seed, pool);
    std::vector<double> out;
    for (std::size_t i = 0; i < n; ++i)
        if (s.survived[i] > 0.0) out.push_back(s.values[i] / t);
    return out;
}

namespace detail {

inline constexpr std::size_t kJackknifeBlock = 1000;
inline constexpr std::size_t kMinSurvivors = 100;
inline constexpr std::size_t kWarnSurvivors = 500;

/// Fills trajectory/survivor counts and applies the survivor thresholds.
void check_survivors(EstimateTable& table, std::span<const double> survived);

}  // namespace detail

/// E[exp(-theta <f, X_t> / t) | zeta > t] for each theta, by filtering direct
/// trajectories on survival. `limit_mean` is <phi_tilde, f> Sigma / 2, the mean
/// of the exponential Yaglom law; when given, targets are 1 / (1 + limit_mean theta).
template <BranchingModel M, class F>
EstimateTable yaglom_laplace(const M& model, const typename M::State& x0, F&& f, double t,
                             std::span<const double> thetas, std::size_t n, std::uint64_t seed,
                             const WorkerPool& pool, std::optional<double> limit_mean = std::nullopt) {
    for (double th : thetas)
        if (!(th >= 0.0)) throw RangeError("yaglom_laplace: theta must be nonnegative");
    const auto s = sample_functional(model, x0, t, f, n, seed, pool);
    EstimateTable table;
    table.title = "yaglom_laplace";
    detail::check_survivors(table, s.survived);
    std::vector<double> num(n);
    for (double th : thetas) {
        for (std::size_t i = 0; i < n; ++i) num[i] = s.survived[i] > 0.0 ? std::exp(-th * s.values[i] / t) : 0.0;
        Estimate e = jackknife_ratio(num, s.survived, detail::kJackknifeBlock);
        e.n = table.survivors;
        std::optional<double> target;
        if (limit_mean) target = 1.0 / (1.0 + *limit_mean * th);
        table.add("theta=" + format_g17(th), e, target);
    }
    return table;
}

/// E[(<f, X_t> / t)^k | zeta > t] for k = 0..k_max (k_max <= 3). Targets
/// k! limit_mean^k are attached only when `limit_mean` is given.
template <BranchingModel M, class F>
EstimateTable conditional_moments(const M& model, const typename M::State& x0, F&& f, double t, int k_max,
                                  std::size_t n, std::uint64_t seed, const WorkerPool& pool,
                                  std::optional<double> limit_mean = std::nullopt) {
    if (k_max < 0 || k_max > 3) throw RangeError("conditional_moments: k_max must be in [0, 3]");
    const auto s = sample_functional(model, x0, t, f, n, seed, pool);
    EstimateTable table;
    table.title = "conditional_moments";
    detail::check_survivors(table, s.survived);
    std::vector<double> num(n);
    double factorial = 1.0;
    for (int k = 0; k <= k_max; ++k) {
        if (k > 0) factorial *= k;
        for (std::size_t i = 0; i < n; ++i)
            num[i] = s.survived[i] > 0.0 ? std::pow(s.values[i] / t, k) : 0.0;
        Estimate e = jackknife_ratio(num, s.survived, detail::kJackknifeBlock);
        e.n = table.survivors;
        std::optional<double> target;
        if (limit_mean) target = factorial * std::pow(*limit_mean, k);
        table.add("k=" + std::to_string(k), e, target);
    }
    return table;
}

/// Spine estimates of E^phi[<phi, X_t>^j] / t^j against (j+1)! (Sigma/2)^j for
/// every (t, j); each t uses seed mix_seed(seed + index).
template <SpineKernel K>
EstimateTable moment_table(const K& kernel, const EigenTriple& eigen, const typename K::State& x0,
                           std::span<const double> t_grid, std::span<const int> js, std::size_t n,
                           std::uint64_t seed, const WorkerPool& pool) {
    for (int j : js)
        if (j < 1 || j > 3) throw RangeError("moment_table: j must be in {1, 2, 3}");
    EstimateTable table;
    table.title = "moment_table";
    table.trajectories = n;
    for (std::size_t k = 0; k < t_grid.size(); ++k) {
        const auto est = spine_moment_estimate(kernel, x0, t_grid[k], js, n, mix_seed(seed + k), pool);
        for (std::size_t q = 0; q < js.size(); ++q) {
            double target = std::pow(eigen.sigma / 2.0, js[q]);
            for (int i = 2; i <= js[q] + 1; ++i) target *= i;
            table.add("t=" + format_g17(t_grid[k]) + ";j=" + std::to_string(js[q]), est[q], target);
        }
    }
    return table;
}

struct OdeAsymptoticsRow {
    double t = 0.0;
    double a = 0.0;         ///< <phi_tilde, u_t>
    double a_scaled = 0.0;  ///< a(t) Sigma t / 2
    double sup_dev = 0.0;   ///< sup_i |u_t(i) / phi_i - a(t)| t^2
};

struct OdeAsymptotics {
    std::vector<OdeAsymptoticsRow> rows;
    SurvivalOde ode;

    /// Columns t, a, a_scaled, sup_dev_t2.
    std::string to_csv() const;
};

/// Deterministic table from the RK4 survival ODE at the given times (all <= t_max).
OdeAsymptotics ode_asymptotics(const FiniteTypeModel& model, const EigenTriple& eigen, double t_max,
                               std::span<const double> report_times);

}  // namespace mbp
