#include "mbp/limits.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace mbp {

std::string format_g17(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    // snprintf follows LC_NUMERIC; map a comma decimal point back to '.'.
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    std::string s(buf);
    std::replace(s.begin(), s.end(), ',', '.');
    return s;
}

void EstimateTable::add(std::string param, const Estimate& e, std::optional<double> target) {
    TableRow row;
    row.param = std::move(param);
    row.estimate = e.value;
    row.se = e.se;
    row.n_effective = e.n;
    if (target) {
        row.target = *target;
        row.rel_err = *target != 0.0 ? (e.value - *target) / *target : std::nan("");
    }
    rows.push_back(std::move(row));
}

std::string EstimateTable::to_csv() const {
    std::string out = "param,estimate,stderr,target,rel_err,n_effective\n";
    for (const auto& r : rows) {
        out += r.param;
        out += ',' + format_g17(r.estimate);
        out += ',' + format_g17(r.se);
        out += ',' + (std::isnan(r.target) ? std::string() : format_g17(r.target));
        out += ',' + (std::isnan(r.rel_err) ? std::string() : format_g17(r.rel_err));
        out += ',' + std::to_string(r.n_effective);
        out += '\n';
    }
    return out;
}

Estimate SurvivalCurve::scaled(std::size_t k) const {
    const double t = times.at(k);
    const Estimate& e = survival.at(k);
    return {t * e.value, t * e.se, e.n};
}

EstimateTable SurvivalCurve::to_table() const {
    EstimateTable table;
    table.title = "survival";
    table.trajectories = n;
    for (std::size_t k = 0; k < times.size(); ++k) table.add("t=" + format_g17(times[k]), scaled(k), limit);
    return table;
}

namespace detail {

void check_time_grid(std::span<const double> grid) {
    if (grid.empty()) throw RangeError("survival_curve: empty time grid");
    for (std::size_t k = 0; k < grid.size(); ++k) {
        if (!(grid[k] >= 0.0)) throw RangeError("survival_curve: negative time");
        if (k > 0 && !(grid[k] > grid[k - 1])) throw RangeError("survival_curve: time grid must be increasing");
    }
}

std::optional<double> kolmogorov_limit(const EigenTriple* eigen, double phi_x0) {
    if (eigen == nullptr || !(eigen->sigma > 0.0)) return std::nullopt;
    return 2.0 * phi_x0 / eigen->sigma;
}

void check_survivors(EstimateTable& table, std::span<const double> survived) {
    table.trajectories = survived.size();
    std::size_t count = 0;
    for (double s : survived) count += s > 0.0 ? 1 : 0;
    table.survivors = count;
    if (count < kMinSurvivors)
        throw StatisticsError("only " + std::to_string(count) + " surviving trajectories (need at least " +
                              std::to_string(kMinSurvivors) + ")");
    if (count < kWarnSurvivors)
        table.warnings.push_back("only " + std::to_string(count) + " surviving trajectories; conditioned estimates are noisy");
}

}  // namespace detail

std::string OdeAsymptotics::to_csv() const {
    std::string out = "t,a,a_scaled,sup_dev_t2\n";
    for (const auto& r : rows)
        out += format_g17(r.t) + ',' + format_g17(r.a) + ',' + format_g17(r.a_scaled) + ',' + format_g17(r.sup_dev) +
               '\n';
    return out;
}

OdeAsymptotics ode_asymptotics(const FiniteTypeModel& model, const EigenTriple& eigen, double t_max,
                               std::span<const double> report_times) {
    OdeAsymptotics out;
    out.ode = nonlinear_ode(model, t_max, default_ode_step(model), &eigen);
    for (double t : report_times) {
        if (t < 0.0 || t > t_max * (1.0 + 1e-12)) throw RangeError("ode_asymptotics: report time outside [0, t_max]");
        const std::size_t k = out.ode.index_of(t);
        OdeAsymptoticsRow row;
        row.t = out.ode.times[k];
        row.a = out.ode.a[k];
        row.a_scaled = row.a * eigen.sigma * row.t / 2.0;
        const Eigen::VectorXd& u = out.ode.u[k];
        double dev = 0.0;
        for (Eigen::Index i = 0; i < u.size(); ++i) dev = std::max(dev, std::abs(u[i] / eigen.phi[i] - row.a));
        row.sup_dev = dev * row.t * row.t;
        out.rows.push_back(row);
    }
    return out;
}

}  // namespace mbp
