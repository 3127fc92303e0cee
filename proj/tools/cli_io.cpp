#include "cli_io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <variant>

#include "mbp/branching.hpp"
#include "mbp/combinatorics.hpp"
#include "mbp/eigen.hpp"
#include "mbp/error.hpp"
#include "mbp/finite_model.hpp"
#include "mbp/limits.hpp"
#include "mbp/models.hpp"
#include "mbp/nbp.hpp"
#include "mbp/parallel.hpp"
#include "mbp/spine.hpp"

namespace mbp::cli {

using nlohmann::json;

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

namespace {

/// Bad flags or values: exit code 2, like schema errors.
struct ConfigError : Error {
    using Error::Error;
};

struct Context {
    const RunConfig& cfg;
    std::ostream& out;
    std::ostream& err;
    WorkerPool pool;
    AnyModel model;
    std::string model_text;
    json summary = json::object();
    std::vector<std::string> failures;
    std::string csv;
};

std::uint64_t require_seed(const RunConfig& cfg) {
    if (!cfg.seed) throw ConfigError(cfg.command + ": --seed is required for Monte Carlo subcommands");
    return *cfg.seed;
}

std::size_t count_or(const RunConfig& cfg, std::size_t fallback) {
    const std::size_t n = cfg.n.value_or(fallback);
    if (n < 2) throw ConfigError("--n must be at least 2");
    return n;
}

std::vector<double> require_times(const RunConfig& cfg) {
    if (cfg.times.empty()) throw ConfigError(cfg.command + ": --t is required");
    for (std::size_t k = 0; k < cfg.times.size(); ++k) {
        if (!(cfg.times[k] >= 0.0)) throw ConfigError("--t values must be nonnegative");
        if (k > 0 && !(cfg.times[k] > cfg.times[k - 1])) throw ConfigError("--t values must be increasing");
    }
    return cfg.times;
}

double tol_or(const RunConfig& cfg, double fallback) { return cfg.tol >= 0.0 ? cfg.tol : fallback; }

std::vector<double> parse_list(const std::string& text, const char* what) {
    std::vector<double> xs;
    std::string item;
    std::istringstream is(text);
    while (std::getline(is, item, ',')) {
        std::istringstream one(item);
        one.imbue(std::locale::classic());
        double x = 0.0;
        if (!(one >> x) || !(one >> std::ws).eof()) throw ConfigError(std::string("cannot parse ") + what + " '" + text + "'");
        xs.push_back(x);
    }
    return xs;
}

int finite_x0(const RunConfig& cfg, const FiniteTypeModel& m) {
    if (cfg.x0.empty()) return 0;
    const auto v = parse_list(cfg.x0, "--x0");
    if (v.size() != 1 || v[0] != std::floor(v[0]) || v[0] < 1 || v[0] > m.types())
        throw ConfigError("--x0 must be a type between 1 and " + std::to_string(m.types()));
    return static_cast<int>(v[0]) - 1;
}

PhasePoint nbp_x0(const RunConfig& cfg, const NbpModel& m) {
    PhasePoint x;
    x.r = Vec3::Zero();
    x.v = Vec3(0.5 * (m.v_min() + m.v_max()), 0.0, 0.0);
    if (!cfg.x0.empty()) {
        const auto v = parse_list(cfg.x0, "--x0");
        if (v.size() != 6) throw ConfigError("--x0 for an NBP model is rx,ry,rz,vx,vy,vz");
        x.r = Vec3(v[0], v[1], v[2]);
        x.v = Vec3(v[3], v[4], v[5]);
    }
    if (!m.is_valid(x)) throw ConfigError("--x0 is not a valid phase point of the model");
    return x;
}

Eigen::VectorXd finite_f(const RunConfig& cfg, const FiniteTypeModel& m, const EigenTriple* eigen) {
    const int d = m.types();
    if (cfg.f == "1") return Eigen::VectorXd::Ones(d);
    if (cfg.f == "phi") {
        if (eigen == nullptr) throw ConfigError("--f phi needs an eigen triple");
        return eigen->phi;
    }
    const auto v = parse_list(cfg.f, "--f");
    if (static_cast<int>(v.size()) != d) throw ConfigError("--f must list one value per type");
    for (double x : v)
        if (!(x >= 0.0)) throw ConfigError("--f values must be nonnegative");
    return Eigen::Map<const Eigen::VectorXd>(v.data(), d);
}

std::function<double(const PhasePoint&)> nbp_f(const RunConfig& cfg) {
    if (cfg.f == "1") return [](const PhasePoint&) { return 1.0; };
    if (cfg.f == "speed") return [](const PhasePoint& x) { return x.v.norm(); };
    throw ConfigError("--f for an NBP model must be 1 or speed");
}

void print_table(Context& ctx, const EstimateTable& table) {
    for (const auto& r : table.rows) {
        ctx.out << std::left << std::setw(22) << r.param << ' ' << format_g17(r.estimate) << " +- " << format_g17(r.se);
        if (!std::isnan(r.target)) ctx.out << "  target " << format_g17(r.target);
        if (!std::isnan(r.rel_err)) ctx.out << "  rel_err " << format_g17(r.rel_err);
        ctx.out << "  n " << r.n_effective << '\n';
    }
    for (const auto& w : table.warnings) ctx.err << "warning: " << w << '\n';
    ctx.csv = table.to_csv();
    ctx.summary["rows"] = table.rows.size();
    if (table.survivors > 0) ctx.summary["survivors"] = table.survivors;
    if (!table.warnings.empty()) ctx.summary["warnings"] = table.warnings;
}

void check(Context& ctx, bool ok, const std::string& what) {
    if (!ok) ctx.failures.push_back(what);
}

/// |estimate - target| <= k SE, or exact equality when SE vanishes.
bool within_se(const TableRow& r, double k) {
    if (r.se == 0.0) return r.estimate == r.target || std::abs(r.estimate - r.target) <= 1e-12 * std::abs(r.target);
    return std::abs(r.estimate - r.target) <= k * r.se;
}

json eigen_json(const EigenTriple& e) {
    json j;
    j["lambda"] = e.lambda;
    j["lambda_se"] = e.lambda_se;
    j["sigma"] = e.sigma;
    j["sigma_se"] = e.sigma_se;
    j["normalization"] = e.normalization;
    j["right_residual"] = e.right_residual;
    j["left_residual"] = e.left_residual;
    j["exact"] = e.exact;
    j["phi"] = std::vector<double>(e.phi.data(), e.phi.data() + e.phi.size());
    j["phi_tilde"] = std::vector<double>(e.phi_tilde.data(), e.phi_tilde.data() + e.phi_tilde.size());
    if (e.grid) j["grid"] = e.grid->describe();
    return j;
}

EigenTriple nbp_eigen(Context& ctx, const NbpModel& m, std::uint64_t seed) {
    const EigenTriple e = estimate_eigen_nbp(m, PhaseGrid::for_model(m), NbpEigenOptions{}, mix_seed(seed ^ 0xE16E),
                                             ctx.pool);
    ctx.summary["eigen"] = eigen_json(e);
    return e;
}

// ---------------------------------------------------------------------------
// Subcommands

void cmd_combinatorics(Context& ctx) {
    const int k_max = ctx.cfg.k_max < 0 ? 12 : ctx.cfg.k_max;
    if (k_max < 1 || k_max > kStirlingIdentityGuard)
        throw ConfigError("--k-max must be in [1, " + std::to_string(kStirlingIdentityGuard) + "]");
    EstimateTable table;
    for (int k = 1; k <= k_max; ++k) {
        const BigInt lhs = factorial(k + 1), rhs = stirling_identity_rhs(k);
        check(ctx, lhs == rhs, "stirling identity at k=" + std::to_string(k));
        table.add("stirling;k=" + std::to_string(k), {rhs.convert_to<double>(), 0.0, 1}, lhs.convert_to<double>());
    }
    // Small laws with up to four atoms, including negative and fractional ones.
    struct Law {
        const char* name;
        std::vector<BigRational> atoms, probs;
    };
    const std::vector<Law> laws = {
        {"bernoulli", {0, 1}, {BigRational(1, 2), BigRational(1, 2)}},
        {"three", {1, 2, 3}, {BigRational(1, 2), BigRational(1, 3), BigRational(1, 6)}},
        {"signed", {-1, 0, 2, 5}, {BigRational(1, 4), BigRational(1, 4), BigRational(1, 3), BigRational(1, 6)}},
        {"halves", {BigRational(1, 2), BigRational(3, 2)}, {BigRational(1, 3), BigRational(2, 3)}},
    };
    for (const auto& law : laws) {
        for (int n = 1; n <= 4; ++n) {
            for (int k = 1; k <= 5; ++k) {
                std::vector<BigRational> moments;
                for (int i = 1; i <= k; ++i) {
                    BigRational m = 0;
                    for (std::size_t a = 0; a < law.atoms.size(); ++a) {
                        BigRational power = 1;
                        for (int e = 0; e < i; ++e) power *= law.atoms[a];
                        m += law.probs[a] * power;
                    }
                    moments.push_back(m);
                }
                const BigRational formula = iid_moment_formula(k, n, moments);
                const BigRational brute = iid_moment_brute_force(k, n, law.atoms, law.probs);
                const std::string param =
                    std::string("iid;") + law.name + ";n=" + std::to_string(n) + ";k=" + std::to_string(k);
                check(ctx, formula == brute, param);
                table.add(param, {formula.convert_to<double>(), 0.0, 1}, brute.convert_to<double>());
            }
        }
    }
    print_table(ctx, table);
}

void cmd_simulate(Context& ctx) {
    const auto times = require_times(ctx.cfg);
    const std::uint64_t seed = require_seed(ctx.cfg);
    const std::size_t n = count_or(ctx.cfg, 100000);
    EstimateTable table;
    std::visit(
        [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            using State = typename M::State;
            State x0;
            std::function<double(const State&)> f;
            std::optional<Eigen::VectorXd> fv;
            std::optional<SurvivalOde> ode;
            if constexpr (std::is_same_v<M, FiniteTypeModel>) {
                x0 = finite_x0(ctx.cfg, m);
                const EigenTriple e = exact_eigen(m);
                fv = finite_f(ctx.cfg, m, &e);
                f = [v = *fv](int i) { return v[i]; };
                if (times.back() > 0.0) ode = nonlinear_ode(m, times.back(), default_ode_step(m));
            } else {
                x0 = nbp_x0(ctx.cfg, m);
                f = nbp_f(ctx.cfg);
            }
            SimulationOptions opt;
            opt.t_max = std::max(times.back(), 1e-300);
            opt.checkpoints = times;
            std::vector<std::vector<double>> values(times.size(), std::vector<double>(n)),
                alive(times.size(), std::vector<double>(n));
            ctx.pool.for_each_index(n, [&](std::size_t i) {
                RngStream rng(seed, i);
                const auto rec = simulate_tree(m, x0, opt, rng);
                for (std::size_t k = 0; k < times.size(); ++k) {
                    values[k][i] = functional(rec.snapshots[k], f);
                    alive[k][i] = rec.snapshots[k].states.empty() ? 0.0 : 1.0;
                }
            });
            for (std::size_t k = 0; k < times.size(); ++k) {
                const std::string t = "t=" + format_g17(times[k]);
                std::optional<double> mean_target, surv_target;
                if constexpr (std::is_same_v<M, FiniteTypeModel>) {
                    mean_target = mean_semigroup(m, times[k], *fv)[x0];
                    surv_target = times[k] == 0.0 ? 1.0 : ode->u[ode->index_of(times[k])][x0];
                }
                table.add(t + ";mean", mean_estimate(values[k]), mean_target);
                table.add(t + ";survival", mean_estimate(alive[k]), surv_target);
                if constexpr (std::is_same_v<M, NbpModel>) {
                    if (times[k] > 0.0)
                        table.add(t + ";many_to_one", nrw_many_to_one(m, f, x0, times[k], n, mix_seed(seed + k), ctx.pool));
                }
            }
        },
        ctx.model);
    print_table(ctx, table);
    const auto& rows = table.rows;
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (!std::isnan(rows[r].target)) check(ctx, within_se(rows[r], 3.0), rows[r].param + " outside 3 SE of the exact value");
        if (rows[r].param.ends_with(";many_to_one")) {
            const TableRow& direct = rows[r - 2];
            check(ctx, z_score({direct.estimate, direct.se, 0}, {rows[r].estimate, rows[r].se, 0}) <= 3.0,
                  rows[r].param + " disagrees with the direct mean beyond 3 combined SE");
        }
    }
}

void cmd_eigen(Context& ctx) {
    EstimateTable table;
    std::visit(
        [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            EigenTriple e;
            if constexpr (std::is_same_v<M, FiniteTypeModel>) {
                e = exact_eigen(m);
                ctx.summary["eigen"] = eigen_json(e);
                check(ctx, e.right_residual <= 1e-10 && e.left_residual <= 1e-10, "eigen residuals above 1e-10");
                check(ctx, std::abs(e.normalization - 1.0) <= 1e-10, "normalization <phi_tilde, phi> != 1");
            } else {
                e = nbp_eigen(ctx, m, require_seed(ctx.cfg));
                check(ctx, std::abs(e.normalization - 1.0) <= 0.02, "normalization <phi_tilde, phi> off by more than 2%");
            }
            check(ctx, e.phi.minCoeff() > 0.0, "phi is not strictly positive");
            table.add("lambda", {e.lambda, e.lambda_se, 0});
            table.add("sigma", {e.sigma, e.sigma_se, 0});
            table.add("normalization", {e.normalization, 0.0, 0});
            for (Eigen::Index i = 0; i < e.phi.size(); ++i) table.add("phi[" + std::to_string(i + 1) + "]", {e.phi[i], 0.0, 0});
            for (Eigen::Index i = 0; i < e.phi_tilde.size(); ++i)
                table.add("phi_tilde[" + std::to_string(i + 1) + "]", {e.phi_tilde[i], 0.0, 0});
        },
        ctx.model);
    print_table(ctx, table);
}

void cmd_calibrate(Context& ctx) {
    EstimateTable table;
    std::string text;
    double tol = 0.0;
    std::visit(
        [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, FiniteTypeModel>) {
                tol = tol_or(ctx.cfg, 1e-10);
                const auto c = calibrate_critical(m, tol);
                table.add("multiplier", {c.multiplier, 0.0, 0});
                table.add("lambda", {c.eigen.lambda, 0.0, 0});
                table.add("sigma", {c.eigen.sigma, 0.0, 0});
                ctx.summary["eigen"] = eigen_json(c.eigen);
                text = c.model.to_text();
            } else {
                tol = tol_or(ctx.cfg, 0.01);
                NbpCalibrationOptions opt;
                opt.tol = tol;
                opt.walks = count_or(ctx.cfg, opt.walks);
                const auto c = calibrate_critical(m, opt, require_seed(ctx.cfg), ctx.pool);
                table.add("multiplier", {c.multiplier, 0.0, 0});
                table.add("lambda", c.bisection_lambda);
                table.add("sigma", {c.eigen.sigma, c.eigen.sigma_se, 0});
                ctx.summary["eigen"] = eigen_json(c.eigen);
                ctx.summary["iterations"] = c.iterations;
                text = c.model.to_text();
            }
        },
        ctx.model);
    check(ctx, std::abs(table.rows[1].estimate) <= tol, "calibrated |lambda| above tolerance");
    print_table(ctx, table);
    ctx.summary["calibrated_model"] = text;
    if (!ctx.cfg.out_dir.empty()) {
        std::ofstream(std::filesystem::path(ctx.cfg.out_dir) / "calibrated.model", std::ios::binary) << text;
    }
}

void cmd_survival(Context& ctx) {
    const auto times = require_times(ctx.cfg);
    const std::uint64_t seed = require_seed(ctx.cfg);
    const std::size_t n = count_or(ctx.cfg, 100000);
    const std::string& method = ctx.cfg.method;
    if (method != "direct" && method != "spine") throw ConfigError("--method must be direct or spine");
    EstimateTable table;
    std::visit(
        [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            SurvivalCurve curve;
            std::optional<SurvivalOde> ode;
            if constexpr (std::is_same_v<M, FiniteTypeModel>) {
                const int x0 = finite_x0(ctx.cfg, m);
                const EigenTriple e = exact_eigen(m);
                if (method == "direct") curve = survival_curve_direct(m, x0, times, n, seed, ctx.pool, &e);
                else curve = survival_curve_spine(FiniteSpineKernel(m, e), e, x0, times, n, seed, ctx.pool);
                if (times.back() > 0.0) ode = nonlinear_ode(m, times.back(), default_ode_step(m));
                for (std::size_t k = 0; k < times.size(); ++k) {
                    const double target = times[k] == 0.0 ? 1.0 : ode->u[ode->index_of(times[k])][x0];
                    table.add("t=" + format_g17(times[k]), curve.survival[k], target);
                }
            } else {
                const PhasePoint x0 = nbp_x0(ctx.cfg, m);
                if (method == "direct") {
                    curve = survival_curve_direct(m, x0, times, n, seed, ctx.pool);
                } else {
                    const EigenTriple e = nbp_eigen(ctx, m, seed);
                    curve = survival_curve_spine(NbpSpineKernel(m, e), e, x0, times, n, seed, ctx.pool);
                }
                for (std::size_t k = 0; k < times.size(); ++k) table.add("t=" + format_g17(times[k]), curve.survival[k]);
            }
            for (std::size_t k = 0; k < times.size(); ++k)
                table.add("t=" + format_g17(times[k]) + ";scaled", curve.scaled(k), curve.limit);
        },
        ctx.model);
    print_table(ctx, table);
    for (const auto& r : table.rows)
        if (!r.param.ends_with(";scaled") && !std::isnan(r.target))
            check(ctx, within_se(r, 3.0), r.param + " outside 3 SE of the ODE survival probability");
}

void cmd_yaglom(Context& ctx) {
    const auto times = require_times(ctx.cfg);
    if (times.size() != 1 || times[0] <= 0.0) throw ConfigError("yaglom takes a single positive --t");
    const double t = times[0];
    const std::uint64_t seed = require_seed(ctx.cfg);
    const std::size_t n = count_or(ctx.cfg, 1000000);
    const std::vector<double> thetas = ctx.cfg.thetas.empty() ? std::vector<double>{0.5, 1.0, 2.0} : ctx.cfg.thetas;
    const int k_max = ctx.cfg.k_max < 0 ? 0 : ctx.cfg.k_max;
    const double tol = tol_or(ctx.cfg, 0.05);
    EstimateTable table;
    std::visit(
        [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, FiniteTypeModel>) {
                const int x0 = finite_x0(ctx.cfg, m);
                const EigenTriple e = exact_eigen(m);
                const Eigen::VectorXd fv = finite_f(ctx.cfg, m, &e);
                const auto f = [&](int i) { return fv[i]; };
                const double mean = e.phi_tilde.dot(fv) * e.sigma / 2.0;
                table = yaglom_laplace(m, x0, f, t, thetas, n, seed, ctx.pool, mean);
                if (k_max > 0) {
                    // Moment targets are only claimed for f = phi.
                    const bool is_phi = (fv - e.phi).cwiseAbs().maxCoeff() <= 1e-12;
                    auto mom = conditional_moments(m, x0, f, t, k_max, n, seed, ctx.pool,
                                                   is_phi ? std::optional<double>(mean) : std::nullopt);
                    for (auto& r : mom.rows) table.rows.push_back(r);
                }
            } else {
                const PhasePoint x0 = nbp_x0(ctx.cfg, m);
                const auto f = nbp_f(ctx.cfg);
                table = yaglom_laplace(m, x0, f, t, thetas, n, seed, ctx.pool);
                if (k_max > 0) {
                    auto mom = conditional_moments(m, x0, f, t, k_max, n, seed, ctx.pool);
                    for (auto& r : mom.rows) table.rows.push_back(r);
                }
            }
        },
        ctx.model);
    print_table(ctx, table);
    for (const auto& r : table.rows)
        if (r.param.starts_with("theta=") && !std::isnan(r.target))
            check(ctx, std::abs(r.estimate - r.target) <= tol, r.param + " further than " + format_g17(tol) + " from target");
}

void cmd_moments(Context& ctx) {
    const auto times = require_times(ctx.cfg);
    for (double t : times)
        if (t <= 0.0) throw ConfigError("moments: --t values must be positive");
    const std::uint64_t seed = require_seed(ctx.cfg);
    const std::size_t n = count_or(ctx.cfg, 100000);
    const std::vector<int> js = ctx.cfg.js.empty() ? std::vector<int>{1, 2, 3} : ctx.cfg.js;
    EstimateTable table;
    std::visit(
        [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            if constexpr (std::is_same_v<M, FiniteTypeModel>) {
                const EigenTriple e = exact_eigen(m);
                table = moment_table(FiniteSpineKernel(m, e), e, finite_x0(ctx.cfg, m), times, js, n, seed, ctx.pool);
            } else {
                const EigenTriple e = nbp_eigen(ctx, m, seed);
                table = moment_table(NbpSpineKernel(m, e), e, nbp_x0(ctx.cfg, m), times, js, n, seed, ctx.pool);
            }
        },
        ctx.model);
    print_table(ctx, table);
    const double rel[] = {0.0, 0.05, 0.10, 0.20};
    std::size_t r = 0;
    for (double t : times) {
        for (int j : js) {
            const TableRow& row = table.rows[r++];
            const double slack = rel[j] + 3.0 * row.se / row.target + ctx.cfg.allowance / t;
            check(ctx, std::abs(row.estimate / row.target - 1.0) <= slack, row.param + " ratio outside tolerance");
        }
    }
}

void cmd_ode(Context& ctx) {
    const auto* m = std::get_if<FiniteTypeModel>(&ctx.model);
    if (m == nullptr) throw ConfigError("ode: needs a finite-type model");
    const double t_max = ctx.cfg.t_max;
    if (!(t_max > 0.0)) throw ConfigError("--t-max must be positive");
    std::vector<double> report = ctx.cfg.times;
    if (report.empty()) {
        for (double t : {0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0, 300.0, 400.0, 500.0, 1000.0})
            if (t <= t_max) report.push_back(t);
        if (report.back() != t_max) report.push_back(t_max);
    }
    const EigenTriple e = exact_eigen(*m);
    const OdeAsymptotics table = ode_asymptotics(*m, e, t_max, report);
    for (const auto& r : table.rows)
        ctx.out << "t=" << std::left << std::setw(8) << format_g17(r.t) << " a " << format_g17(r.a) << "  a*sigma*t/2 "
                << format_g17(r.a_scaled) << "  sup_dev*t^2 " << format_g17(r.sup_dev) << '\n';
    ctx.csv = table.to_csv();
    ctx.summary["rows"] = table.rows.size();
    ctx.summary["eigen"] = eigen_json(e);

    const auto& last = table.rows.back();
    if (last.t > 0.0)
        check(ctx, last.a_scaled <= 1.0 + 1e-12 && 1.0 - last.a_scaled <= ctx.cfg.allowance / last.t,
              "a(t) sigma t / 2 outside [1 - c/t, 1] at t=" + format_g17(last.t));
    double early = 0.0, late = 0.0;
    for (const auto& r : table.rows) {
        if (r.t >= 50.0 && r.t <= 100.0) early = std::max(early, r.sup_dev);
        if (r.t >= 50.0) late = std::max(late, r.sup_dev);
    }
    if (early > 0.0) check(ctx, late <= 2.0 * early + 1e-9, "sup_i |u_t(i)/phi_i - a(t)| t^2 grows beyond t=100");
}

void cmd_ergodic(Context& ctx) {
    const auto* m = std::get_if<FiniteTypeModel>(&ctx.model);
    if (m == nullptr) throw ConfigError("ergodic-check: needs a finite-type model");
    const auto times = require_times(ctx.cfg);
    const std::uint64_t seed = require_seed(ctx.cfg);
    const std::size_t n = count_or(ctx.cfg, 100000);
    if (ctx.cfg.factors < 1 || ctx.cfg.factors > 8) throw ConfigError("--factors must be in [1, 8]");
    if (ctx.cfg.type < 1 || ctx.cfg.type > m->types()) throw ConfigError("--type out of range");
    const int type = ctx.cfg.type - 1;
    const EigenTriple e = exact_eigen(*m);
    const FiniteSpineKernel kernel(*m, e);
    const std::vector<ErgodicFactor> factors(static_cast<std::size_t>(ctx.cfg.factors),
                                             [type](int i, double) { return i == type ? 1.0 : 0.0; });
    EstimateTable table;
    for (std::size_t k = 0; k < times.size(); ++k) {
        if (times[k] <= 0.0) throw ConfigError("ergodic-check: --t values must be positive");
        const auto res = ergodic_average_check(kernel, e, factors, finite_x0(ctx.cfg, *m), times[k], n,
                                               mix_seed(seed + k), ctx.pool);
        table.add("t=" + format_g17(times[k]), res.estimate, res.target);
    }
    print_table(ctx, table);
    for (const auto& r : table.rows) check(ctx, within_se(r, 3.0), r.param + " outside 3 SE of the ergodic target");
}

std::string utc_timestamp() {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_outputs(Context& ctx) {
    namespace fs = std::filesystem;
    const fs::path dir(ctx.cfg.out_dir);
    fs::create_directories(dir);
    std::ofstream(dir / (ctx.cfg.command + ".csv"), std::ios::binary) << ctx.csv;
    std::ofstream(dir / (ctx.cfg.command + ".json"), std::ios::binary) << ctx.summary.dump(2) << '\n';
}

}  // namespace

int run(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    using Handler = void (*)(Context&);
    static const std::vector<std::pair<std::string, Handler>> commands = {
        {"simulate", cmd_simulate},   {"eigen", cmd_eigen},     {"calibrate", cmd_calibrate},
        {"survival", cmd_survival},   {"yaglom", cmd_yaglom},   {"moments", cmd_moments},
        {"ode", cmd_ode},             {"ergodic-check", cmd_ergodic}, {"combinatorics-check", cmd_combinatorics},
    };
    const auto it = std::find_if(commands.begin(), commands.end(), [&](const auto& c) { return c.first == cfg.command; });
    if (it == commands.end()) {
        err << "error: unknown subcommand '" << cfg.command << "'\n";
        return kConfigError;
    }
    if (cfg.workers == 0) {
        err << "error: --workers must be positive\n";
        return kConfigError;
    }
    try {
        std::string text;
        AnyModel model = cfg.command == "combinatorics-check" ? AnyModel(model_bin()) : load_model(cfg.model, &text);
        Context ctx{cfg, out, err, WorkerPool(cfg.workers), std::move(model), std::move(text)};
        ctx.summary["command"] = cfg.command;
        if (cfg.command != "combinatorics-check") {
            ctx.summary["model"] = model_name(ctx.model);
            std::ostringstream hash;
            hash << std::hex << std::setw(16) << std::setfill('0') << fnv1a(ctx.model_text);
            ctx.summary["model_hash"] = hash.str();
        }
        if (cfg.seed) ctx.summary["seed"] = *cfg.seed;
        if (cfg.n) ctx.summary["n"] = *cfg.n;
        ctx.summary["workers"] = cfg.workers;
        ctx.summary["timestamp"] = utc_timestamp();

        it->second(ctx);

        ctx.summary["failures"] = ctx.failures;
        if (!cfg.out_dir.empty()) write_outputs(ctx);
        if (cfg.assert_targets && !ctx.failures.empty()) {
            for (const auto& f : ctx.failures) err << "assertion failed: " << f << '\n';
            return kAssertionFailed;
        }
        return kOk;
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    } catch (const ParseError& e) {
        err << "model error: " << e.what() << '\n';
        return kConfigError;
    } catch (const ModelError& e) {
        err << "model error: " << e.what() << '\n';
        return kConfigError;
    } catch (const RangeError& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << '\n';
        return kRuntimeError;
    }
}

int main_entry(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Monte Carlo and exact-oracle laboratory for critical branching Markov processes", "mbplab"};
    app.require_subcommand(1, 1);
    RunConfig cfg;
    cfg.workers = default_worker_count();
    std::uint64_t seed = 0;
    std::size_t n = 0;

    const auto common = [&](CLI::App* sub, bool monte_carlo) {
        sub->add_option("--model", cfg.model, "bundled model name or path to a model file");
        sub->add_option("--out", cfg.out_dir, "directory for CSV and JSON outputs");
        sub->add_flag("--assert", cfg.assert_targets, "exit 1 if any target check fails");
        sub->add_option("--workers", cfg.workers, "worker threads (default MBPLAB_WORKERS or 1)");
        if (monte_carlo) {
            sub->add_option("--seed", seed, "random seed (required)");
            sub->add_option("--n", n, "number of trajectories, spine trees or walks");
        }
    };
    const auto times = [&](CLI::App* sub) { sub->add_option("--t", cfg.times, "time grid")->delimiter(','); };
    const auto x0 = [&](CLI::App* sub) {
        sub->add_option("--x0", cfg.x0, "initial type (1-based) or rx,ry,rz,vx,vy,vz");
    };

    auto* simulate = app.add_subcommand("simulate", "population mean and survival at checkpoints");
    common(simulate, true), times(simulate), x0(simulate);
    simulate->add_option("--f", cfg.f, "test function: 1, phi, speed or a per-type list");

    auto* eigen = app.add_subcommand("eigen", "eigen-elements and the variance constant");
    common(eigen, true);

    auto* calibrate = app.add_subcommand("calibrate", "bisect the yield multiplier to criticality");
    common(calibrate, true);
    calibrate->add_option("--tol", cfg.tol, "tolerance on |lambda|");

    auto* survival = app.add_subcommand("survival", "survival probabilities and t P(survive to t)");
    common(survival, true), times(survival), x0(survival);
    survival->add_option("--method", cfg.method, "direct or spine")->check(CLI::IsMember({"direct", "spine"}));

    auto* yaglom = app.add_subcommand("yaglom", "conditioned Laplace transforms and moments");
    common(yaglom, true), times(yaglom), x0(yaglom);
    yaglom->add_option("--theta", cfg.thetas, "Laplace arguments")->delimiter(',');
    yaglom->add_option("--f", cfg.f, "test function: 1, phi, speed or a per-type list");
    yaglom->add_option("--k-max", cfg.k_max, "also report conditioned moments up to this order (<= 3)");
    yaglom->add_option("--tol", cfg.tol, "absolute tolerance for --assert (default 0.05)");

    auto* moments = app.add_subcommand("moments", "spine estimates of E[<phi, X_t>^j] / t^j");
    common(moments, true), times(moments), x0(moments);
    moments->add_option("--j", cfg.js, "moment orders")->delimiter(',');
    moments->add_option("--allowance", cfg.allowance, "c in the c / t finite-time allowance");

    auto* ode = app.add_subcommand("ode", "survival ODE and the asymptotics of a(t)");
    common(ode, false), times(ode);
    ode->add_option("--t-max", cfg.t_max, "integration horizon");
    ode->add_option("--allowance", cfg.allowance, "c in the c / t finite-time allowance");

    auto* ergodic = app.add_subcommand("ergodic-check", "time averages along the spine");
    common(ergodic, true), times(ergodic), x0(ergodic);
    ergodic->add_option("--type", cfg.type, "indicator type (1-based)");
    ergodic->add_option("--factors", cfg.factors, "number of indicator factors in the product");

    auto* comb = app.add_subcommand("combinatorics-check", "exact moment and Stirling identities");
    comb->add_option("--k-max", cfg.k_max, "largest k for the Stirling identity");
    comb->add_flag("--assert", cfg.assert_targets, "exit 1 if any identity fails");
    comb->add_option("--out", cfg.out_dir, "directory for CSV and JSON outputs");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    }
    cfg.command = app.get_subcommands().front()->get_name();
    const CLI::App* sub = app.get_subcommands().front();
    if (sub->get_option_no_throw("--seed") != nullptr && sub->count("--seed") > 0) cfg.seed = seed;
    if (sub->get_option_no_throw("--n") != nullptr && sub->count("--n") > 0) cfg.n = n;
    return run(cfg, out, err);
}

}  // namespace mbp::cli
