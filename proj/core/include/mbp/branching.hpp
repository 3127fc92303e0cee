#pragma once

// Generic event-driven simulator for branching Markov processes.

#include <algorithm>
#include <concepts>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mbp/error.hpp"
#include "mbp/parallel.hpp"
#include "mbp/rng.hpp"
#include "mbp/stats.hpp"

namespace mbp {

enum class FlightEnd {
    Horizon,   ///< reached the requested time without an event
    Branch,    ///< branch clock rang; the particle is replaced by its offspring
    Absorbed,  ///< left the state space (killed)
};

template <class State>
struct Flight {
    State state;
    double elapsed;
    FlightEnd end;
};

/// What a concrete model must provide to be simulated.
///
/// sample_flight advances one particle until the earliest of its branch clock,
/// absorption, or max_dt. sample_offspring overwrites `out` with one draw of the
/// offspring point process at the given state.
template <class M>
concept BranchingModel = requires(const M& m, const typename M::State& s, RngStream& rng,
                                  double dt, std::vector<typename M::State>& out) {
    { m.sample_flight(s, dt, rng) } -> std::same_as<Flight<typename M::State>>;
    { m.sample_offspring(s, rng, out) } -> std::same_as<void>;
    { m.gamma(s) } -> std::convertible_to<double>;
    { m.m_scalar(s) } -> std::convertible_to<double>;
    { m.n_max() } -> std::convertible_to<std::size_t>;
    { m.is_valid(s) } -> std::convertible_to<bool>;
};

/// The atomic measure X_t: the states of all particles alive at `time`.
template <class State>
struct PopulationSnapshot {
    double time = 0.0;
    std::vector<State> states;
};

/// Extinction time; `time` is empty when the population survived past t_max.
struct ExtinctionTime {
    std::optional<double> time;
    double t_max = 0.0;

    bool censored() const noexcept { return !time.has_value(); }
    /// Indicator of {zeta > t} for t <= t_max.
    bool survives(double t) const noexcept { return censored() || *time > t; }
};

template <class State>
struct TrajectoryRecord {
    std::vector<PopulationSnapshot<State>> snapshots;
    ExtinctionTime extinction;
};

struct SimulationOptions {
    double t_max = 1.0;
    std::vector<double> checkpoints;  ///< sorted, within [0, t_max]
    std::size_t population_cap = 1'000'000;
    /// Stop as soon as one lineage reaches t_max (survival-only runs).
    bool stop_at_first_survivor = false;
};

/// <f, X>: sum of f over the population; 0 when empty.
template <class State, class F>
double functional(const PopulationSnapshot<State>& snapshot, F&& f) {
    double sum = 0.0;
    for (const auto& x : snapshot.states) sum += f(x);
    return sum;
}

namespace detail {

inline void validate_options(const SimulationOptions& opt) {
    if (!(opt.t_max > 0.0)) throw RangeError("simulate_tree: t_max must be positive");
    if (!std::is_sorted(opt.checkpoints.begin(), opt.checkpoints.end()))
        throw RangeError("simulate_tree: checkpoints must be sorted");
    for (double c : opt.checkpoints)
        if (c < 0.0 || c > opt.t_max) throw RangeError("simulate_tree: checkpoint outside [0, t_max]");
    if (opt.population_cap == 0) throw RangeError("simulate_tree: population cap must be positive");
}

/// Reusable per-worker buffers, so that hot loops do not allocate.
template <class State>
struct TreeScratch {
    std::vector<std::pair<State, double>> stack;
    std::vector<State> offspring;
    std::vector<std::size_t> snapshot_sizes;
};

/// Depth-first simulation of one tree. Particles are independent, so each
/// lineage is advanced to t_max (or death) before its siblings; the empirical
/// measure at a checkpoint c is the set of particles with birth <= c < death.
/// `visit(k, state)` is called for every particle alive at checkpoint k.
struct TreeLimits {
    double t_max;
    std::size_t population_cap;
    bool stop_at_first_survivor;
};

template <BranchingModel M, class Visit>
ExtinctionTime run_tree(const M& model, const typename M::State& x0, std::span<const double> cps,
                        const TreeLimits& opt, RngStream& rng, TreeScratch<typename M::State>& scratch,
                        Visit&& visit) {
    using State = typename M::State;
    auto& stack = scratch.stack;
    auto& kids = scratch.offspring;
    auto& sizes = scratch.snapshot_sizes;
    stack.clear();
    sizes.assign(cps.size(), 0);

    if (!model.is_valid(x0)) throw SimulationError("simulate_tree: initial state outside E");
    stack.emplace_back(x0, 0.0);
    double last_death = 0.0;
    bool censored = false;
    std::size_t at_horizon = 0;  // the cap also bounds trees recorded without checkpoints

    while (!stack.empty()) {
        State x = std::move(stack.back().first);
        double s = stack.back().second;
        stack.pop_back();
        std::size_t k = static_cast<std::size_t>(std::lower_bound(cps.begin(), cps.end(), s) - cps.begin());

        for (;;) {
            const bool at_checkpoint = k < cps.size();
            const double target = at_checkpoint ? cps[k] : opt.t_max;
            if (s >= target && at_checkpoint) {
                // Born exactly at the checkpoint (t = 0 for the root).
                visit(k, static_cast<const State&>(x));
                if (++sizes[k] > opt.population_cap)
                    throw SimulationError("simulate_tree: population cap exceeded");
                ++k;
                continue;
            }
            if (s >= opt.t_max) {
                censored = true;
                if (++at_horizon > opt.population_cap)
                    throw SimulationError("simulate_tree: population cap exceeded");
                break;
            }
            Flight<State> fl = model.sample_flight(x, target - s, rng);
            x = std::move(fl.state);
            if (fl.end == FlightEnd::Horizon) {
                s = target;
                if (!model.is_valid(x)) throw SimulationError("simulate_tree: model produced a state outside E");
                continue;
            }
            s += fl.elapsed;
            if (s >= target) s = std::nextafter(target, 0.0);
            if (fl.end == FlightEnd::Absorbed) {
                last_death = std::max(last_death, s);
                break;
            }
            model.sample_offspring(x, rng, kids);
            if (kids.size() > model.n_max())
                throw SimulationError("simulate_tree: offspring count exceeds n_max");
            if (kids.empty()) {
                last_death = std::max(last_death, s);
                break;
            }
            for (auto& child : kids) {
                if (!model.is_valid(child)) throw SimulationError("simulate_tree: offspring outside E");
                stack.emplace_back(std::move(child), s);
            }
            if (stack.size() > opt.population_cap)
                throw SimulationError("simulate_tree: population cap exceeded");
            break;
        }
        if (censored && opt.stop_at_first_survivor) break;
    }
    ExtinctionTime ext;
    ext.t_max = opt.t_max;
    if (!censored) ext.time = last_death;
    return ext;
}

}  // namespace detail

/// Exact simulation of one branching tree started from a single particle.
template <BranchingModel M>
TrajectoryRecord<typename M::State> simulate_tree(const M& model, const typename M::State& x0,
                                                  const SimulationOptions& opt, RngStream& rng) {
    detail::validate_options(opt);
    detail::TreeScratch<typename M::State> scratch;
    TrajectoryRecord<typename M::State> rec;
    rec.snapshots.resize(opt.checkpoints.size());
    for (std::size_t k = 0; k < opt.checkpoints.size(); ++k) rec.snapshots[k].time = opt.checkpoints[k];
    const detail::TreeLimits lim{opt.t_max, opt.population_cap, opt.stop_at_first_survivor};
    rec.extinction = detail::run_tree(model, x0, opt.checkpoints, lim, rng, scratch,
                                      [&](std::size_t k, const auto& x) { rec.snapshots[k].states.push_back(x); });
    if (rec.extinction.censored() && opt.stop_at_first_survivor) rec.snapshots.clear();
    return rec;
}

/// <f, X_t> and the survival indicator of one tree, without storing states.
struct TreeFunctional {
    double value = 0.0;
    bool survived = false;
};

template <BranchingModel M, class F>
TreeFunctional tree_functional(const M& model, const typename M::State& x0, double t, F&& f,
                               RngStream& rng, detail::TreeScratch<typename M::State>& scratch,
                               std::size_t population_cap = 1'000'000) {
    const double cps[] = {t};
    const detail::TreeLimits lim{t, population_cap, false};
    double sum = 0.0;
    const auto ext = detail::run_tree(model, x0, cps, lim, rng, scratch,
                                      [&](std::size_t, const auto& x) { sum += f(x); });
    return {sum, ext.censored()};
}

/// Per-trajectory samples of <f, X_t> and 1{zeta > t}, indexed by stream.
struct FunctionalSamples {
    std::vector<double> values;
    std::vector<double> survived;
};

template <BranchingModel M, class F>
FunctionalSamples sample_functional(const M& model, const typename M::State& x0, double t, F&& f,
                                    std::size_t n, std::uint64_t seed, const WorkerPool& pool,
                                    std::size_t population_cap = 1'000'000) {
    if (!(t > 0.0)) throw RangeError("sample_functional: t must be positive");
    FunctionalSamples out;
    out.values.resize(n);
    out.survived.resize(n);
    pool.for_each_index(n, [&](std::size_t i) {
        thread_local detail::TreeScratch<typename M::State> scratch;
        RngStream rng(seed, i);
        const auto r = tree_functional(model, x0, t, f, rng, scratch, population_cap);
        out.values[i] = r.value;
        out.survived[i] = r.survived ? 1.0 : 0.0;
    });
    return out;
}

/// Extinction times of n independent trees simulated to t_max (survival only).
template <BranchingModel M>
std::vector<ExtinctionTime> sample_extinction(const M& model, const typename M::State& x0, double t_max,
                                              std::size_t n, std::uint64_t seed, const WorkerPool& pool,
                                              std::size_t population_cap = 1'000'000) {
    if (!(t_max > 0.0)) throw RangeError("sample_extinction: t_max must be positive");
    const detail::TreeLimits lim{t_max, population_cap, true};
    std::vector<ExtinctionTime> out(n);
    pool.for_each_index(n, [&](std::size_t i) {
        thread_local detail::TreeScratch<typename M::State> scratch;
        RngStream rng(seed, i);
        out[i] = detail::run_tree(model, x0, std::span<const double>{}, lim, rng, scratch,
                                  [](std::size_t, const auto&) {});
    });
    return out;
}

struct BatchEstimate {
    Estimate functional;  ///< E[<f, X_t>]
    Estimate survival;    ///< P(zeta > t)
};

/// Monte Carlo mean of <f, X_t> and of the survival indicator over n trees.
/// Bit-identical for fixed (seed, n) whatever the pool size.
template <BranchingModel M, class F>
BatchEstimate batch_estimate(const M& model, const typename M::State& x0, double t, F&& f,
                             std::size_t n, std::uint64_t seed, const WorkerPool& pool) {
    if (n < 2) throw RangeError("batch_estimate: need at least two trajectories");
    const auto s = sample_functional(model, x0, t, f, n, seed, pool);
    return {mean_estimate(s.values), mean_estimate(s.survived)};
}

}  // namespace mbp
