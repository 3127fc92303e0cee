#include <doctest.h>

#include <cmath>

#include "mbp/branching.hpp"
#include "mbp/eigen.hpp"
#include "mbp/finite_model.hpp"

using namespace mbp;

namespace {

/// A particle that never moves and never branches.
struct StillModel {
    using State = int;
    Flight<int> sample_flight(int s, double max_dt, RngStream&) const { return {s, max_dt, FlightEnd::Horizon}; }
    void sample_offspring(int, RngStream&, std::vector<int>& out) const { out.clear(); }
    double gamma(int) const { return 0.0; }
    double m_scalar(int) const { return 0.0; }
    std::size_t n_max() const { return 0; }
    bool is_valid(int s) const { return s == 0; }
};

FiniteTypeModel parse(const char* text) { return parse_finite_model(text); }

}  // namespace

TEST_CASE("population functional") {
    PopulationSnapshot<int> empty;
    CHECK(functional(empty, [](int) { return 3.0; }) == 0.0);
    PopulationSnapshot<int> twins{0.0, {0, 0}};
    CHECK(functional(twins, [](int) { return 1.0; }) == 2.0);
    PopulationSnapshot<int> mixed{0.0, {0, 1, 1}};
    const double f[] = {1.0, 2.0};
    CHECK(functional(mixed, [&](int i) { return f[i]; }) == 5.0);
}

TEST_CASE("a process without events keeps its initial particle") {
    const StillModel m;
    RngStream rng(1, 0);
    SimulationOptions opt;
    opt.t_max = 50.0;
    opt.checkpoints = {0.0, 10.0, 50.0};
    const auto rec = simulate_tree(m, 0, opt, rng);
    CHECK(rec.extinction.censored());
    for (const auto& snap : rec.snapshots) CHECK(snap.states == std::vector<int>{0});

    const WorkerPool pool(1);
    const auto e = batch_estimate(m, 0, 5.0, [](int) { return 2.5; }, 2, 9, pool);
    CHECK(e.functional.value == 2.5);
    CHECK(e.functional.se == 0.0);
    CHECK(e.survival.value == 1.0);
}

TEST_CASE("pure death: extinction time is exponential") {
    const auto m = parse("model = finite\ntypes = 1\nrate.1 = 2.5\noffspring.1 = 1 :\n");
    const WorkerPool pool(1);
    const auto ext = sample_extinction(m, 0, 1e6, 100000, 3, pool);
    RunningStats s;
    for (const auto& e : ext) {
        REQUIRE_FALSE(e.censored());
        s.add(*e.time);
    }
    CHECK(std::abs(s.mean() - 0.4) <= 3.0 * s.stderror());
}

TEST_CASE("binary splitting survives to t = 10 with probability 1/6") {
    const auto m = model_bin();
    const WorkerPool pool(1);
    const auto e = batch_estimate(m, 0, 10.0, [](int) { return 1.0; }, 200000, 11, pool);
    CHECK(std::abs(e.survival.value - 1.0 / 6.0) <= 3.0 * e.survival.se);
    CHECK(std::abs(e.functional.value - 1.0) <= 3.0 * e.functional.se);
}

TEST_CASE("martingale <phi, X_t> for the critical finite models") {
    const WorkerPool pool(1);
    for (const auto& m : {model_bin(), model_2t(), model_3t()}) {
        const auto eig = exact_eigen(m);
        const auto phi = [&](int i) { return eig.phi[i]; };
        for (double t : {1.0, 5.0, 20.0}) {
            const auto e = batch_estimate(m, 0, t, phi, 40000, 17, pool);
            INFO(m.name(), " t=", t);
            CHECK(std::abs(e.functional.value - eig.phi[0]) <= 3.0 * e.functional.se);
        }
    }
}

TEST_CASE("results do not depend on the worker count") {
    const auto m = model_2t();
    const auto a = sample_functional(m, 0, 7.0, [](int i) { return i + 1.0; }, 3000, 5, WorkerPool(1));
    const auto b = sample_functional(m, 0, 7.0, [](int i) { return i + 1.0; }, 3000, 5, WorkerPool(8));
    CHECK(a.values == b.values);
    CHECK(a.survived == b.survived);

    RngStream r1(5, 12), r2(5, 12);
    SimulationOptions opt;
    opt.t_max = 6.0;
    opt.checkpoints = {1.0, 3.0, 6.0};
    const auto t1 = simulate_tree(m, 1, opt, r1);
    const auto t2 = simulate_tree(m, 1, opt, r2);
    for (std::size_t k = 0; k < 3; ++k) CHECK(t1.snapshots[k].states == t2.snapshots[k].states);
    CHECK(t1.extinction.time == t2.extinction.time);
}

TEST_CASE("snapshots are consistent with the extinction time") {
    const auto m = model_2t();
    SimulationOptions opt;
    opt.t_max = 20.0;
    for (int k = 0; k <= 20; ++k) opt.checkpoints.push_back(k);
    for (std::uint64_t i = 0; i < 500; ++i) {
        RngStream rng(21, i);
        const auto rec = simulate_tree(m, 0, opt, rng);
        for (std::size_t k = 0; k < opt.checkpoints.size(); ++k)
            REQUIRE(rec.snapshots[k].states.empty() == !rec.extinction.survives(opt.checkpoints[k]));
    }
}

TEST_CASE("supercritical growth hits the population cap") {
    const auto m = parse("model = finite\ntypes = 1\nrate.1 = 1\noffspring.1 = 1 : 3\n");
    RngStream rng(1, 0);
    SimulationOptions opt;
    opt.t_max = 100.0;
    opt.population_cap = 1000;
    CHECK_THROWS_AS(simulate_tree(m, 0, opt, rng), SimulationError);
}

TEST_CASE("option validation") {
    const auto m = model_bin();
    RngStream rng(1, 0);
    SimulationOptions opt;
    opt.t_max = 0.0;
    CHECK_THROWS_AS(simulate_tree(m, 0, opt, rng), RangeError);
    opt.t_max = 1.0;
    opt.checkpoints = {0.5, 0.2};
    CHECK_THROWS_AS(simulate_tree(m, 0, opt, rng), RangeError);
    opt.checkpoints = {2.0};
    CHECK_THROWS_AS(simulate_tree(m, 0, opt, rng), RangeError);
    opt.checkpoints = {};
    CHECK_THROWS_AS(simulate_tree(m, 3, opt, rng), SimulationError);
    CHECK_THROWS_AS(batch_estimate(m, 0, 1.0, [](int) { return 1.0; }, 1, 1, WorkerPool(1)), RangeError);
}
