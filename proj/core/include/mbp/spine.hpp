#pragma once

// The process under the martingale change of measure P^phi, built from an
// immortal spine particle that branches at rate rho = gamma m[phi] / phi into a
// size-biased offspring set, continues as one child picked proportionally to
// phi, and leaves the other children behind as ordinary independent subtrees.

#include <concepts>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mbp/branching.hpp"
#include "mbp/eigen.hpp"
#include "mbp/error.hpp"
#include "mbp/finite_model.hpp"
#include "mbp/nbp.hpp"
#include "mbp/parallel.hpp"
#include "mbp/rng.hpp"
#include "mbp/stats.hpp"

namespace mbp {

template <class State>
struct SpineStep {
    State state;
    double elapsed;
    bool branched;  ///< true if the step ended in a spine branch event
};

/// Single-particle law of the spine under P^phi together with its branch events.
///
/// advance() moves the spine until its next branch event or max_dt. On a branch
/// event it returns the new spine particle and writes the other children to `kids`.
template <class K>
concept SpineKernel = requires(const K& k, const typename K::State& s, RngStream& rng, double dt,
                               std::vector<typename K::State>& kids) {
    typename K::Model;
    { k.model() } -> std::same_as<const typename K::Model&>;
    { k.phi(s) } -> std::convertible_to<double>;
    { k.advance(s, dt, rng, kids) } -> std::same_as<SpineStep<typename K::State>>;
};

/// Exact spine for a finite-type model at criticality.
class FiniteSpineKernel {
public:
    using Model = FiniteTypeModel;
    using State = int;

    /// Throws ModelError unless the eigen triple is critical (|lambda| <= 1e-10) and
    /// the phi-transformed generator is conservative within 1e-10.
    FiniteSpineKernel(const FiniteTypeModel& model, const EigenTriple& eigen);

    const FiniteTypeModel& model() const noexcept { return *model_; }
    double phi(int i) const { return phi_[static_cast<std::size_t>(i)]; }
    /// rho_i = gamma_i m[phi](i) / phi_i.
    double rho(int i) const { return rho_[static_cast<std::size_t>(i)]; }
    /// Size-biased outcome probabilities p_o <phi, Z_o> / m[phi](i), in table order.
    const std::vector<double>& size_biased(int i) const { return biased_[static_cast<std::size_t>(i)]; }
    /// Largest |sum_j Q_ij| of the phi-transformed generator Q.
    double conservativity_residual() const noexcept { return conservativity_; }

    SpineStep<int> advance(int state, double max_dt, RngStream& rng, std::vector<int>& kids) const;
    /// Index of a size-biased outcome for type i.
    std::size_t sample_size_biased(int i, RngStream& rng) const;

private:
    const FiniteTypeModel* model_;
    std::vector<double> phi_;
    std::vector<double> rho_;
    std::vector<std::vector<double>> biased_;
    std::vector<std::vector<double>> biased_cdf_;
    double conservativity_ = 0.0;
};

/// Approximate spine for the NBP using the grid estimate of phi.
///
/// Scattering and fission of the spine are sampled by thinning against the
/// envelopes sigma_s,max R and sigma_f,max n_max R, where R = max phi / min phi.
/// A piecewise-constant phi does not vanish on the outgoing boundary, so the
/// spine would occasionally reach it; it is then reflected specularly.
class NbpSpineKernel {
public:
    using Model = NbpModel;
    using State = PhasePoint;

    NbpSpineKernel(const NbpModel& model, const EigenTriple& eigen, double lambda_tol = 0.05);

    const NbpModel& model() const noexcept { return *model_; }
    double phi(const PhasePoint& x) const { return eigen_->phi_at(x); }
    SpineStep<PhasePoint> advance(const PhasePoint& x, double max_dt, RngStream& rng,
                                  std::vector<PhasePoint>& kids) const;

private:
    const NbpModel* model_;
    const EigenTriple* eigen_;
    double envelope_s_ = 0.0;
    double envelope_f_ = 0.0;
};

template <class State>
struct ImmigrationEvent {
    double time;
    State birth_state;
    double contribution;  ///< <phi, X_{t - time}> of the subtree
};

/// Piecewise-constant branch rate along the spine: rho[k] on [starts[k], starts[k+1]).
struct SpinePath {
    std::vector<double> starts;
    std::vector<double> rho;
    double t_end = 0.0;

    double integral() const;
};

template <class State>
struct SpineRecord {
    std::vector<State> path;  ///< spine state at each checkpoint
    std::vector<ImmigrationEvent<State>> immigrations;
    double spine_phi = 0.0;   ///< phi at the spine's position at time t
    double total = 0.0;       ///< <phi, X_t> = spine_phi + sum of contributions
    std::size_t branch_events = 0;
};

struct SpineOptions {
    std::vector<double> checkpoints;  ///< sorted, within [0, t]
    bool record_immigrations = true;
    bool simulate_subtrees = true;  ///< false: spine motion only, total = phi(Y_t)
    std::size_t population_cap = 1'000'000;
};

namespace detail {

template <SpineKernel K>
struct SpineScratch {
    std::vector<typename K::State> kids;
    TreeScratch<typename K::State> tree;
};

}  // namespace detail

/// Simulates one spine tree on [0, t]. The spine uses `rng`; the subtree born at
/// immigration ordinal j >= 1 uses rng.substream(j).
template <SpineKernel K>
SpineRecord<typename K::State> simulate_spine(const K& kernel, const typename K::State& x0, double t,
                                              const SpineOptions& opt, RngStream& rng,
                                              detail::SpineScratch<K>& scratch, SpinePath* path = nullptr) {
    using State = typename K::State;
    if (!(t >= 0.0)) throw RangeError("simulate_spine: negative time");
    const auto& model = kernel.model();
    if (!model.is_valid(x0)) throw RangeError("simulate_spine: initial state outside E");
    SpineRecord<State> rec;
    rec.path.reserve(opt.checkpoints.size());
    const auto phi = [&](const State& x) { return kernel.phi(x); };

    State y = x0;
    double s = 0.0;
    std::uint32_t ordinal = 0;
    std::size_t ck = 0;
    if constexpr (requires { kernel.rho(y); }) {
        if (path != nullptr) {
            path->starts.assign(1, 0.0);
            path->rho.assign(1, kernel.rho(y));
            path->t_end = t;
        }
    }
    for (;;) {
        while (ck < opt.checkpoints.size() && opt.checkpoints[ck] <= s) {
            rec.path.push_back(y);
            ++ck;
        }
        if (s >= t) break;
        const double target = ck < opt.checkpoints.size() ? std::min(opt.checkpoints[ck], t) : t;
        SpineStep<State> step = kernel.advance(y, target - s, rng, scratch.kids);
        y = std::move(step.state);
        if (!step.branched) {
            s = target;
            continue;
        }
        s = std::min(s + step.elapsed, std::nextafter(target, 0.0));
        ++rec.branch_events;
        if constexpr (requires { kernel.rho(y); }) {
            if (path != nullptr) {
                path->starts.push_back(s);
                path->rho.push_back(kernel.rho(y));
            }
        }
        if (!opt.simulate_subtrees) continue;
        for (const State& kid : scratch.kids) {
            RngStream sub = rng.substream(++ordinal);
            const double horizon = t - s;
            double contribution;
            if (horizon > 0.0) {
                contribution = tree_functional(model, kid, horizon, phi, sub, scratch.tree, opt.population_cap).value;
            } else {
                contribution = kernel.phi(kid);
            }
            rec.total += contribution;
            if (opt.record_immigrations) rec.immigrations.push_back({s, kid, contribution});
        }
    }
    rec.spine_phi = kernel.phi(y);
    rec.total += rec.spine_phi;
    return rec;
}

template <SpineKernel K>
SpineRecord<typename K::State> simulate_spine(const K& kernel, const typename K::State& x0, double t,
                                              const SpineOptions& opt, RngStream& rng) {
    detail::SpineScratch<K> scratch;
    return simulate_spine(kernel, x0, t, opt, rng, scratch);
}

/// <phi, X_t> under P^phi for n independent spine trees, indexed by stream.
template <SpineKernel K>
std::vector<double> sample_spine_totals(const K& kernel, const typename K::State& x0, double t, std::size_t n,
                                        std::uint64_t seed, const WorkerPool& pool) {
    std::vector<double> totals(n, 0.0);
    SpineOptions opt;
    opt.record_immigrations = false;
    pool.for_each_index(n, [&](std::size_t i) {
        thread_local detail::SpineScratch<K> scratch;
        RngStream rng(seed, i);
        totals[i] = simulate_spine(kernel, x0, t, opt, rng, scratch).total;
    });
    return totals;
}

/// Estimates of E^phi[<phi, X_t>^j] / t^j for each requested j (0 <= j <= 4),
/// all from the same n spine trees.
template <SpineKernel K>
std::vector<Estimate> spine_moment_estimate(const K& kernel, const typename K::State& x0, double t,
                                            std::span<const int> js, std::size_t n, std::uint64_t seed,
                                            const WorkerPool& pool) {
    for (int j : js)
        if (j < 0 || j > 4) throw RangeError("spine_moment_estimate: j must be in [0, 4]");
    if (!(t > 0.0)) throw RangeError("spine_moment_estimate: t must be positive");
    bool only_zero = true;
    for (int j : js) only_zero = only_zero && j == 0;
    std::vector<Estimate> out;
    if (only_zero) {
        for (std::size_t k = 0; k < js.size(); ++k) out.push_back({1.0, 0.0, n});
        return out;
    }
    if (n < 2) throw RangeError("spine_moment_estimate: need at least two spine trees");
    const std::vector<double> totals = sample_spine_totals(kernel, x0, t, n, seed, pool);
    std::vector<double> powered(n);
    for (int j : js) {
        if (j == 0) {
            out.push_back({1.0, 0.0, n});
            continue;
        }
        for (std::size_t i = 0; i < n; ++i) powered[i] = std::pow(totals[i] / t, j);
        out.push_back(mean_estimate(powered));
    }
    return out;
}

/// P(zeta > t) = E^phi[phi(x0) / <phi, X_t>].
template <SpineKernel K>
Estimate survival_via_spine(const K& kernel, const typename K::State& x0, double t, std::size_t n,
                            std::uint64_t seed, const WorkerPool& pool) {
    if (t == 0.0) return {1.0, 0.0, n};
    if (n < 2) throw RangeError("survival_via_spine: need at least two spine trees");
    std::vector<double> totals = sample_spine_totals(kernel, x0, t, n, seed, pool);
    const double phi0 = kernel.phi(x0);
    for (double& v : totals) {
        if (!(v > 0.0)) throw SimulationError("survival_via_spine: spine tree with non-positive <phi, X_t>");
        v = phi0 / v;
    }
    return mean_estimate(totals);
}

/// Draws from the density rho(Y_s) / int_0^t rho(Y_u) du along a recorded path.
double sample_fission_time(const SpinePath& path, RngStream& rng);

FiniteSpineKernel make_spine_kernel(const FiniteTypeModel& model, const EigenTriple& eigen);
NbpSpineKernel make_spine_kernel(const NbpModel& model, const EigenTriple& eigen);

/// A factor F(state, u) of the ergodic product, u in [0, 1] being rescaled time.
using ErgodicFactor = std::function<double(int, double)>;

struct ErgodicResult {
    Estimate estimate;
    double target = 0.0;
};

/// Estimates E^phi_x[prod_i int_0^1 F_i(Y_{ut}, u) du] from n spine paths (motion
/// only) and compares with prod_i int_0^1 <phi phi_tilde, F_i(., u)> du.
ErgodicResult ergodic_average_check(const FiniteSpineKernel& kernel, const EigenTriple& eigen,
                                    const std::vector<ErgodicFactor>& factors, int x0, double t, std::size_t n,
                                    std::uint64_t seed, const WorkerPool& pool);

}  // namespace mbp
