#pragma once

// Finite-type continuous-time Galton-Watson processes: particles sit still and,
// at rate gamma_i, are replaced by a multiset of offspring types drawn from an
// explicit finite table. Everything the theory needs (mean matrix, pair
// functional, nonlinear term) is computed exactly by enumerating that table.

#include <Eigen/Dense>

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mbp/branching.hpp"
#include "mbp/rng.hpp"

namespace mbp {

struct OffspringOutcome {
    double probability = 0.0;
    std::vector<int> counts;   ///< counts[j] = number of type-j children
    std::vector<int> members;  ///< the same multiset, expanded (sorted by type)
};

class FiniteTypeModel {
public:
    using State = int;

    /// Types are 0-based. Throws ModelError on any invariant violation.
    FiniteTypeModel(std::string name, std::vector<double> rates, std::vector<std::vector<OffspringOutcome>> table);

    const std::string& name() const noexcept { return name_; }
    int types() const noexcept { return static_cast<int>(rates_.size()); }
    double rate(int i) const { return rates_.at(static_cast<std::size_t>(i)); }
    const std::vector<double>& rates() const noexcept { return rates_; }
    const std::vector<OffspringOutcome>& outcomes(int i) const { return table_.at(static_cast<std::size_t>(i)); }
    /// Product of all yield multipliers applied since parsing.
    double yield_multiplier() const noexcept { return yield_multiplier_; }

    // Simulation interface.
    Flight<int> sample_flight(int state, double max_dt, RngStream& rng) const;
    void sample_offspring(int state, RngStream& rng, std::vector<int>& out) const;
    double gamma(int state) const { return rates_[static_cast<std::size_t>(state)]; }
    double m_scalar(int state) const { return m_scalar_[static_cast<std::size_t>(state)]; }
    std::size_t n_max() const noexcept { return n_max_; }
    bool is_valid(int state) const noexcept { return state >= 0 && state < types(); }

    /// M_ij = E_i[number of type-j offspring].
    Eigen::MatrixXd mean_matrix() const;
    /// A = diag(gamma) (M - I); the mean semigroup is exp(tA).
    Eigen::MatrixXd generator() const;

    /// Every child is independently replaced by K copies, K in {floor(k), ceil(k)}
    /// with E[K] = k, so the mean matrix scales exactly by k.
    FiniteTypeModel with_yield_multiplier(double kappa) const;

    /// Canonical text form (the file schema); parse(to_text()) reproduces the model.
    std::string to_text() const;

private:
    std::string name_;
    std::vector<double> rates_;
    std::vector<std::vector<OffspringOutcome>> table_;
    std::vector<std::vector<double>> cumulative_;
    std::vector<double> m_scalar_;
    std::size_t n_max_ = 0;
    double yield_multiplier_ = 1.0;
};

/// Parses the key-value model schema:
///
///     model = finite
///     name = model-2t
///     types = 2
///     rate.1 = 1
///     offspring.1 = 1/2 :          (no children)
///     offspring.1 = 1/2 : 1 1      (one child of each type)
///
/// Types are 1-based in files. Probabilities are decimals or p/q rationals; a
/// type whose probabilities are all rational must sum to exactly 1, otherwise
/// the sum must be within 1e-12 of 1. Errors carry the line number.
FiniteTypeModel parse_finite_model(std::string_view text);

// Bundled models. The same definitions ship as files under models/.
std::string_view bundled_model_text(std::string_view name);  ///< empty if unknown
std::vector<std::string> bundled_model_names();
FiniteTypeModel model_bin();
FiniteTypeModel model_2t();
FiniteTypeModel model_3t();

/// psi_t[f] = exp(tA) f.
Eigen::VectorXd mean_semigroup(const FiniteTypeModel& model, double t, const Eigen::VectorXd& f);

/// V[f, g](i) = E_i[sum_{k != l} f(x_k) g(x_l)].
double variance_functional(const FiniteTypeModel& model, int i, const Eigen::VectorXd& f, const Eigen::VectorXd& g);
Eigen::VectorXd variance_functional(const FiniteTypeModel& model, const Eigen::VectorXd& f, const Eigen::VectorXd& g);

/// m[f](i) = E_i[<f, Z>].
Eigen::VectorXd offspring_mean(const FiniteTypeModel& model, const Eigen::VectorXd& f);

/// G[h](i) = gamma_i E_i[1 - prod(1 - h(x_k)) - sum h(x_k)].
Eigen::VectorXd nonlinear_branching_term(const FiniteTypeModel& model, const Eigen::VectorXd& h);

/// E_i[<f, X_t><g, X_t>] for every initial type i, by the two-point formula
/// psi_t[fg] + int_0^t psi_s[gamma V[psi_{t-s} f, psi_{t-s} g]] ds.
Eigen::VectorXd many_to_two_exact(const FiniteTypeModel& model, const Eigen::VectorXd& f, const Eigen::VectorXd& g,
                                  double t, double rel_tol = 1e-8);

struct EigenTriple;

/// Survival probabilities u_t(i) = P_i(zeta > t) on a fixed RK4 grid.
struct SurvivalOde {
    double dt = 0.0;
    std::vector<double> times;
    std::vector<Eigen::VectorXd> u;
    std::vector<double> a;  ///< <phi_tilde, u_t>, empty without an eigen triple

    /// Grid index of the step nearest to t.
    std::size_t index_of(double t) const;
};

/// Integrates du/dt = gamma (E[1 - prod(1 - u(x_k))] - u), u_0 = 1, by classical RK4.
/// Requires dt <= 0.01 / max gamma; checks monotonicity and [0, 1] bounds afterwards.
SurvivalOde nonlinear_ode(const FiniteTypeModel& model, double t_max, double dt, const EigenTriple* eigen = nullptr);

/// Largest step nonlinear_ode accepts for this model.
double default_ode_step(const FiniteTypeModel& model);

}  // namespace mbp
