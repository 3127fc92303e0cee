#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "mbp/eigen.hpp"
#include "mbp/error.hpp"
#include "mbp/stats.hpp"

namespace mbp {

namespace {

int bin(double coord, int n) { return std::clamp(static_cast<int>(coord * n), 0, n - 1); }

/// Two unit vectors completing `a` to an orthonormal basis.
void orthonormal_pair(const Vec3& a, Vec3& e1, Vec3& e2) {
    const Vec3 helper = std::abs(a[0]) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    e1 = a.cross(helper).normalized();
    e2 = a.cross(e1);
}

// Seeds for the independent parts of the eigen estimate.
std::uint64_t sub_seed(std::uint64_t seed, std::uint64_t purpose) { return mix_seed(seed ^ (purpose * 0x9E3779B97F4A7C15ull)); }

/// <phi_tilde, sigma_f sum_{i != j} g(v_i) g(v_j)> with g given per grid cell.
Estimate pair_functional(const NbpModel& model, const EigenTriple& eigen, const Eigen::VectorXd& g, std::size_t n,
                         std::uint64_t seed, const WorkerPool& pool) {
    if (!eigen.grid) throw RangeError("pair functional needs a grid eigen triple");
    const PhaseGrid& grid = *eigen.grid;
    const double vol = grid.cell_volume();
    std::vector<double> cdf(static_cast<std::size_t>(grid.cells()));
    double acc = 0.0;
    for (int c = 0; c < grid.cells(); ++c) {
        acc += std::max(0.0, eigen.phi_tilde[c]) * vol;
        cdf[static_cast<std::size_t>(c)] = acc;
    }
    if (!(acc > 0.0)) throw StatisticsError("pair functional: phi_tilde has no mass");
    std::vector<double> values(n, 0.0);
    pool.for_each_index(n, [&](std::size_t i) {
        thread_local std::vector<Vec3> velocities;
        RngStream rng(seed, i);
        const double u = rng.uniform() * acc;
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        const int cell = std::min(static_cast<int>(it - cdf.begin()), grid.cells() - 1);
        const PhasePoint x = grid.sample_in_cell(cell, rng);
        const int region = model.geometry().region_of(x.r);
        if (region < 0) return;
        const double sf = model.material(region).sigma_f;
        if (sf == 0.0) return;
        const int count = model.sample_yield(region, rng);
        model.sample_fission_velocities(region, count, rng, velocities);
        double s1 = 0.0, s2 = 0.0;
        for (const auto& v : velocities) {
            const double gv = g[grid.cell_of({x.r, v})];
            s1 += gv;
            s2 += gv * gv;
        }
        values[i] = sf * (s1 * s1 - s2);
    });
    return mean_estimate(values);
}

}  // namespace

// ---------------------------------------------------------------------------
// Phase grid

PhaseGrid PhaseGrid::for_model(const NbpModel& model, int n_space, int n_speed, int n_dir) {
    if (n_space < 1 || n_speed < 1 || n_dir < 1) throw RangeError("PhaseGrid: bin counts must be positive");
    if (n_space * n_speed * n_dir > 4096) throw RangeError("PhaseGrid: at most 4096 cells");
    PhaseGrid g;
    g.geometry = model.geometry();
    g.v_min = model.v_min();
    g.v_max = model.v_max();
    g.n_space = n_space;
    g.n_speed = n_speed;
    g.n_dir = n_dir;
    return g;
}

double PhaseGrid::cell_volume() const noexcept {
    const double velocity_volume = 4.0 / 3.0 * std::numbers::pi * (v_max * v_max * v_max - v_min * v_min * v_min);
    // a degenerate speed range still needs a positive reference volume
    const double vv = velocity_volume > 0.0 ? velocity_volume : 4.0 * std::numbers::pi * v_min * v_min;
    return geometry.volume() * vv / cells();
}

int PhaseGrid::cell_of(const PhasePoint& x) const noexcept {
    double s, d;
    const double speed = x.v.norm();
    if (geometry.kind() == Geometry::Kind::Ball) {
        const double rn = x.r.norm();
        const double R = geometry.radius();
        s = std::pow(std::min(rn / R, 1.0), 3);
        d = rn > 0.0 ? x.r.dot(x.v) / (rn * speed) : x.v[2] / speed;
    } else {
        s = (x.r[0] - geometry.lo()) / (geometry.hi() - geometry.lo());
        d = x.v[0] / speed;
    }
    const double a = v_min * v_min * v_min, b = v_max * v_max * v_max;
    const double w = b > a ? (speed * speed * speed - a) / (b - a) : 0.5;
    return (bin(s, n_space) * n_speed + bin(w, n_speed)) * n_dir + bin(0.5 * (d + 1.0), n_dir);
}

PhasePoint PhaseGrid::sample_in_cell(int cell, RngStream& rng) const {
    const int id = cell % n_dir;
    const int iw = (cell / n_dir) % n_speed;
    const int is = cell / (n_dir * n_speed);
    const double s = (is + rng.uniform()) / n_space;
    const double w = (iw + rng.uniform()) / n_speed;
    const double mu = 2.0 * (id + rng.uniform()) / n_dir - 1.0;
    const double a = v_min * v_min * v_min, b = v_max * v_max * v_max;
    const double speed = b > a ? std::cbrt(a + w * (b - a)) : v_min;

    PhasePoint x;
    Vec3 axis;
    if (geometry.kind() == Geometry::Kind::Ball) {
        axis = random_direction(rng);
        x.r = geometry.radius() * std::cbrt(s) * axis;
    } else {
        axis = Vec3::UnitX();
        x.r = Vec3(geometry.lo() + s * (geometry.hi() - geometry.lo()), rng.uniform(geometry.lo(), geometry.hi()),
                   rng.uniform(geometry.lo(), geometry.hi()));
    }
    Vec3 e1, e2;
    orthonormal_pair(axis, e1, e2);
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    const double st = std::sqrt(std::max(0.0, 1.0 - mu * mu));
    x.v = speed * (mu * axis + st * (std::cos(phi) * e1 + std::sin(phi) * e2));
    return x;
}

std::string PhaseGrid::describe() const {
    std::ostringstream os;
    if (geometry.kind() == Geometry::Kind::Ball)
        os << n_space << " equal-volume shells x " << n_speed << " speed bands x " << n_dir << " bands of r.v/|r||v|";
    else
        os << n_space << " x-slabs x " << n_speed << " speed bands x " << n_dir << " bands of v_x/|v|";
    return os.str();
}

// ---------------------------------------------------------------------------
// Estimators

Estimate estimate_lambda_nbp(const NbpModel& model, double t_probe, double delta, std::size_t n, std::uint64_t seed,
                             const WorkerPool& pool) {
    if (!(t_probe >= 0.0) || !(delta > 0.0)) throw RangeError("estimate_lambda_nbp: need t >= 0 and delta > 0");
    if (n < 2) throw RangeError("estimate_lambda_nbp: need at least two walks");
    std::vector<double> w1(n, 0.0), w2(n, 0.0);
    const double times[] = {t_probe, t_probe + delta};
    pool.for_each_index(n, [&](std::size_t i) {
        RngStream rng(seed, i);
        const PhasePoint x0 = model.sample_uniform_phase(rng);
        nrw_walk(model, x0, times, rng, [&](std::size_t k, const PhasePoint&, double logw) {
            (k == 0 ? w1 : w2)[i] = std::exp(logw);
        });
    });
    const Estimate m1 = mean_estimate(w1), m2 = mean_estimate(w2);
    if (!(m1.value > 0.0) || !(m2.value > 0.0))
        throw StatisticsError("estimate_lambda_nbp: no walk survived; increase n or reduce t_probe");
    return {std::log(m2.value / m1.value) / delta, log_ratio_stderr(w1, w2) / delta, n};
}

EigenTriple estimate_eigen_nbp(const NbpModel& model, const PhaseGrid& grid, const NbpEigenOptions& options,
                               std::uint64_t seed, const WorkerPool& pool) {
    if (!(options.t_probe > 0.0) || !(options.delta > 0.0)) throw RangeError("estimate_eigen_nbp: bad times");
    if (grid.cells() > 4096) throw RangeError("estimate_eigen_nbp: at most 4096 cells");
    const int cells = grid.cells();
    const double vol = grid.cell_volume();

    // Right eigenfunction: psi_t[1] averaged over uniform starts inside each cell.
    const std::size_t per = options.walks_per_cell;
    if (per < 2) throw RangeError("estimate_eigen_nbp: need at least two walks per cell");
    std::vector<double> right(static_cast<std::size_t>(cells) * per, 0.0);
    const double t1[] = {options.t_probe};
    const std::uint64_t seed_phi = sub_seed(seed, 1);
    pool.for_each_index(right.size(), [&](std::size_t i) {
        RngStream rng(seed_phi, i);
        const PhasePoint x0 = grid.sample_in_cell(static_cast<int>(i / per), rng);
        nrw_walk(model, x0, t1, rng, [&](std::size_t, const PhasePoint&, double logw) { right[i] = std::exp(logw); });
    });
    Eigen::VectorXd phi(cells);
    for (int c = 0; c < cells; ++c) {
        const auto e = mean_estimate(std::span<const double>(right).subspan(static_cast<std::size_t>(c) * per, per));
        if (!(e.value > 0.0) || e.se > options.max_cell_rel_se * e.value)
            throw StatisticsError("estimate_eigen_nbp: right eigenfunction cell " + std::to_string(c) +
                                  " has relative standard error above limit; increase walks_per_cell or reduce t_probe");
        phi[c] = e.value;
    }

    // Left eigenfunction and lambda from walks started uniformly in D x V.
    const std::size_t n = options.walks_tilde;
    if (n < 2) throw RangeError("estimate_eigen_nbp: need at least two walks for phi_tilde");
    std::vector<double> w1(n, 0.0), w2(n, 0.0);
    std::vector<int> c1(n, -1);
    const double t2[] = {options.t_probe, options.t_probe + options.delta};
    const std::uint64_t seed_tilde = sub_seed(seed, 2);
    pool.for_each_index(n, [&](std::size_t i) {
        RngStream rng(seed_tilde, i);
        const PhasePoint x0 = model.sample_uniform_phase(rng);
        nrw_walk(model, x0, t2, rng, [&](std::size_t k, const PhasePoint& x, double logw) {
            if (k == 0) {
                w1[i] = std::exp(logw);
                c1[i] = grid.cell_of(x);
            } else {
                w2[i] = std::exp(logw);
            }
        });
    });
    std::vector<double> sum(static_cast<std::size_t>(cells), 0.0), sumsq(static_cast<std::size_t>(cells), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (c1[i] < 0) continue;
        sum[static_cast<std::size_t>(c1[i])] += w1[i];
        sumsq[static_cast<std::size_t>(c1[i])] += w1[i] * w1[i];
    }
    const double dn = static_cast<double>(n);
    Eigen::VectorXd tilde(cells);
    for (int c = 0; c < cells; ++c) {
        const double mean = sum[static_cast<std::size_t>(c)] / dn;
        const double var = std::max(0.0, sumsq[static_cast<std::size_t>(c)] / dn - mean * mean);
        const double se = std::sqrt(var / dn);
        if (!(mean > 0.0) || se > options.max_cell_rel_se * mean)
            throw StatisticsError("estimate_eigen_nbp: left eigenfunction cell " + std::to_string(c) +
                                  " has relative standard error above limit; increase walks_tilde");
        tilde[c] = mean / vol;
    }

    EigenTriple e;
    e.exact = false;
    e.grid = grid;
    const Estimate m1 = mean_estimate(w1), m2 = mean_estimate(w2);
    e.lambda = std::log(m2.value / m1.value) / options.delta;
    e.lambda_se = log_ratio_stderr(w1, w2) / options.delta;
    e.phi_tilde = tilde / (tilde.sum() * vol);
    e.phi = phi / (e.phi_tilde.dot(phi) * vol);
    e.normalization = e.phi_tilde.dot(e.phi) * vol;

    const Estimate s = estimate_sigma_nbp(model, e, options.sigma_samples, sub_seed(seed, 3), pool);
    e.sigma = s.value;
    e.sigma_se = s.se;
    return e;
}

Estimate estimate_sigma_nbp(const NbpModel& model, const EigenTriple& eigen, std::size_t n, std::uint64_t seed,
                            const WorkerPool& pool) {
    if (n < 2) throw RangeError("estimate_sigma_nbp: need at least two samples");
    return pair_functional(model, eigen, eigen.phi, n, seed, pool);
}

double sampled_pair_condition(const NbpModel& model, const EigenTriple& eigen, int count, std::size_t n,
                              std::uint64_t seed, const WorkerPool& pool) {
    if (!eigen.grid) throw RangeError("sampled_pair_condition: needs a grid eigen triple");
    double smallest = std::numeric_limits<double>::infinity();
    for (int k = 0; k < count; ++k) {
        RngStream rng(sub_seed(seed, 100 + static_cast<std::uint64_t>(k)), 0);
        Eigen::VectorXd g(eigen.grid->cells());
        for (int c = 0; c < g.size(); ++c) g[c] = rng.uniform(0.05, 1.0);
        smallest = std::min(smallest, pair_functional(model, eigen, g, n, sub_seed(seed, 200 + k), pool).value);
    }
    return smallest;
}

Calibration<NbpModel> calibrate_critical(const NbpModel& model, const NbpCalibrationOptions& options,
                                         std::uint64_t seed, const WorkerPool& pool) {
    if (!(options.tol > 0.0)) throw RangeError("calibrate_critical: tolerance must be positive");
    if (options.walks < 32) throw RangeError("calibrate_critical: need at least 32 walks");
    // The same streams at every multiplier: the estimate is a deterministic, nearly
    // continuous function of the multiplier, so bisection converges to its root.
    const std::uint64_t seed_cal = sub_seed(seed, 10);
    const std::size_t coarse = options.walks / 16;
    const auto lam = [&](double k, std::size_t n) {
        return estimate_lambda_nbp(model.with_yield_multiplier(k), options.eigen.t_probe, options.eigen.delta, n,
                                   seed_cal, pool);
    };
    // Returns the full-sample estimate, or a coarse one whose sign is already clear.
    const auto evaluate = [&](double k, bool& full) {
        full = false;
        if (coarse >= 1000) {
            const Estimate e = lam(k, coarse);
            if (std::abs(e.value) > 4.0 * e.se) return e;
        }
        full = true;
        return lam(k, options.walks);
    };
    double lo = 0.1, hi = 10.0;
    bool full = false;
    const Estimate flo = evaluate(lo, full), fhi = evaluate(hi, full);
    if (!(flo.value < 0.0 && fhi.value > 0.0))
        throw ConvergenceError("calibrate_critical: lambda does not change sign on [0.1, 10]");
    double k = 1.0;
    Estimate f{};
    int it = 0;
    for (; it < options.max_iterations; ++it) {
        k = 0.5 * (lo + hi);
        f = evaluate(k, full);
        // Once the estimate sits well inside its own noise, further halving only
        // chases the particular sample.
        if (full && std::abs(f.value) <= options.tol && (hi - lo <= 1e-4 * k || std::abs(f.value) <= 0.25 * f.se))
            break;
        if (f.value < 0.0) lo = k;
        else hi = k;
    }
    if (!full || std::abs(f.value) > options.tol)
        throw ConvergenceError("calibrate_critical: bisection ended with |lambda| = " + std::to_string(std::abs(f.value)));
    if (f.se > 0.5 * options.tol)
        throw StatisticsError("calibrate_critical: standard error of lambda_hat (" + std::to_string(f.se) +
                              ") exceeds tol / 2; increase walks");
    Calibration<NbpModel> out{model.with_yield_multiplier(k), k, {}, it + 1, f};
    out.eigen = estimate_eigen_nbp(out.model, options.grid ? *options.grid : PhaseGrid::for_model(model), options.eigen,
                                   seed, pool);
    return out;
}

}  // namespace mbp
