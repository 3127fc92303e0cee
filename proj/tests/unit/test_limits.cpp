#include <doctest.h>

#include <cmath>

#include "mbp/eigen.hpp"
#include "mbp/error.hpp"
#include "mbp/finite_model.hpp"
#include "mbp/limits.hpp"

using namespace mbp;

TEST_CASE("CSV rendering of estimate tables") {
    EstimateTable t;
    t.add("theta=1", {0.5, 0.01, 1234}, 0.4);
    t.add("k=0", {1.0, 0.0, 10});
    CHECK(t.to_csv() ==
          "param,estimate,stderr,target,rel_err,n_effective\n"
          "theta=1,0.5,0.01,0.40000000000000002,0.24999999999999994,1234\n"
          "k=0,1,0,,,10\n");
    CHECK(format_g17(0.1) == "0.10000000000000001");
    CHECK(format_g17(-2.0) == "-2");
}

TEST_CASE("direct survival curves") {
    const auto m = model_bin();
    const auto e = exact_eigen(m);
    const double grid[] = {0.0, 5.0, 10.0};
    const auto c = survival_curve_direct(m, 0, grid, 100000, 7, WorkerPool(1), &e);
    CHECK(c.survival[0].value == 1.0);
    CHECK(c.survival[0].se == 0.0);
    REQUIRE(c.limit.has_value());
    CHECK(*c.limit == doctest::Approx(2.0));
    for (std::size_t k = 1; k < 3; ++k) {
        CHECK(std::abs(c.survival[k].value - 2.0 / (2.0 + grid[k])) <= 3.0 * c.survival[k].se);
        CHECK(c.survival[k].value <= c.survival[k - 1].value);
    }
    CHECK(c.scaled(2).value == doctest::Approx(10.0 * c.survival[2].value));
    const double bad[] = {3.0, 1.0};
    CHECK_THROWS_AS(survival_curve_direct(m, 0, bad, 10, 1, WorkerPool(1)), RangeError);
}

TEST_CASE("direct and spine survival agree") {
    const auto m = model_2t();
    const auto e = exact_eigen(m);
    const double grid[] = {2.0, 10.0, 30.0};
    const auto d = survival_curve_direct(m, 0, grid, 200000, 1, WorkerPool(1), &e);
    const auto s = survival_curve_spine(FiniteSpineKernel(m, e), e, 0, grid, 5000, 2, WorkerPool(1));
    for (std::size_t k = 0; k < 3; ++k) CHECK(z_score(d.survival[k], s.survival[k]) <= 3.0);
    CHECK(*s.limit == doctest::Approx(2.0 / 1.2));
}

TEST_CASE("Yaglom Laplace transforms and conditioned moments") {
    const auto m = model_bin();
    const double thetas[] = {0.0, 1.0};
    const auto one = [](int) { return 1.0; };
    const auto t = yaglom_laplace(m, 0, one, 20.0, thetas, 200000, 3, WorkerPool(1), 0.5);
    CHECK(t.rows[0].estimate == 1.0);
    CHECK(t.rows[0].target == 1.0);
    CHECK(t.survivors > 10000);
    CHECK(t.warnings.empty());
    CHECK(std::abs(t.rows[1].estimate - t.rows[1].target) < 0.05);

    const auto mom = conditional_moments(m, 0, one, 20.0, 2, 200000, 3, WorkerPool(1), 0.5);
    CHECK(mom.rows.size() == 3);
    CHECK(mom.rows[0].estimate == 1.0);
    CHECK(mom.rows[1].target == doctest::Approx(0.5));
    CHECK(mom.rows[2].target == doctest::Approx(0.5));
    CHECK_THROWS_AS(conditional_moments(m, 0, one, 20.0, 4, 1000, 3, WorkerPool(1)), RangeError);

    // Too few survivors to condition on.
    CHECK_THROWS_AS(yaglom_laplace(m, 0, one, 200.0, thetas, 3000, 3, WorkerPool(1)), StatisticsError);
    // Between the error and warning thresholds.
    const auto few = yaglom_laplace(m, 0, one, 100.0, thetas, 15000, 4, WorkerPool(1));
    CHECK(few.survivors >= 100);
    CHECK(few.survivors < 500);
    CHECK_FALSE(few.warnings.empty());
}

TEST_CASE("moment table targets") {
    const auto m = model_bin();
    const auto e = exact_eigen(m);
    const double ts[] = {0.01, 50.0};
    const int js[] = {1, 2};
    const auto t = moment_table(FiniteSpineKernel(m, e), e, 0, ts, js, 3000, 5, WorkerPool(1));
    REQUIRE(t.rows.size() == 4);
    CHECK(t.rows[0].param == "t=0.01;j=1");
    CHECK(t.rows[0].target == doctest::Approx(1.0));
    CHECK(t.rows[1].target == doctest::Approx(1.5));
    // Small t: the ratio is far from one and nothing is asserted about it.
    CHECK(t.rows[0].estimate > 10.0);
    CHECK(std::abs(t.rows[2].estimate - 51.0 / 50.0) <= 3.0 * t.rows[2].se);
    const int bad[] = {4};
    CHECK_THROWS_AS(moment_table(FiniteSpineKernel(m, e), e, 0, ts, bad, 10, 5, WorkerPool(1)), RangeError);
}

TEST_CASE("ODE asymptotics table") {
    const auto m = model_bin();
    const auto e = exact_eigen(m);
    const double times[] = {0.0, 10.0, 100.0, 500.0};
    const auto t = ode_asymptotics(m, e, 500.0, times);
    REQUIRE(t.rows.size() == 4);
    CHECK(t.rows[0].a == 1.0);
    for (const auto& r : t.rows) CHECK(std::abs(r.a - 2.0 / (2.0 + r.t)) <= 1e-6);
    CHECK(std::abs(t.rows[3].a_scaled - 500.0 / 502.0) <= 1e-6);
    CHECK(t.rows[3].sup_dev < 1e-6);
    CHECK(t.to_csv().starts_with("t,a,a_scaled,sup_dev_t2\n"));
}
