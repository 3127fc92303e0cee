#include <doctest.h>

#include <cmath>

#include "../common/operator_checks.hpp"
#include "mbp/branching.hpp"
#include "mbp/eigen.hpp"
#include "mbp/error.hpp"
#include "mbp/finite_model.hpp"

using namespace mbp;

TEST_CASE("parsing the finite schema") {
    const auto m = model_2t();
    CHECK(m.types() == 2);
    CHECK(m.rate(1) == 2.0);
    CHECK(m.n_max() == 2);
    Eigen::Matrix2d a;
    a << -0.5, 0.5, 2.0, -2.0;
    CHECK((m.generator() - a).cwiseAbs().maxCoeff() < 1e-15);

    // Canonical text round-trips.
    const auto again = parse_finite_model(m.to_text());
    CHECK((again.generator() - m.generator()).cwiseAbs().maxCoeff() == 0.0);

    const char* bad_prob = "model = finite\ntypes = 1\nrate.1 = 1\noffspring.1 = 1/2 :\noffspring.1 = 1/3 : 2\n";
    CHECK_THROWS_AS(parse_finite_model(bad_prob), Error);
    try {
        parse_finite_model("model = finite\ntypes = 1\nrate.1 = -1\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    CHECK_THROWS_AS(parse_finite_model("model = finite\ntypes = 2\nrate.1 = 1\nrate.2 = 1\noffspring.1 = 1 : 1\n"),
                    ParseError);
    CHECK_THROWS_AS(parse_finite_model("model = finite\ntypes = 1\nbogus = 3\n"), ParseError);
}

TEST_CASE("mean semigroup") {
    const Eigen::VectorXd f = Eigen::VectorXd::Constant(1, 3.0);
    CHECK(mean_semigroup(model_bin(), 12.0, f)[0] == doctest::Approx(3.0).epsilon(1e-14));

    const auto m2 = model_2t();
    const Eigen::Vector2d ones(1.0, 1.0), g(0.3, 1.7);
    for (double t : {0.0, 0.5, 10.0, 100.0})
        CHECK((mean_semigroup(m2, t, ones) - ones).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((mean_semigroup(m2, 0.0, g) - g).cwiseAbs().maxCoeff() == 0.0);
    // A has eigenvalues 0 and -5/2: exp(tA) g = <phi_tilde, g> + e^{-5t/2} (g - <phi_tilde, g>).
    const double mean = 0.8 * 0.3 + 0.2 * 1.7;
    for (double t : {0.3, 1.0, 4.0}) {
        const Eigen::VectorXd got = mean_semigroup(m2, t, g);
        for (int i = 0; i < 2; ++i) CHECK(got[i] == doctest::Approx(mean + std::exp(-2.5 * t) * (g[i] - mean)).epsilon(1e-12));
    }
}

TEST_CASE("pair functional V") {
    const Eigen::VectorXd one1 = Eigen::VectorXd::Ones(1);
    CHECK(variance_functional(model_bin(), 0, one1, one1) == doctest::Approx(1.0));
    const Eigen::Vector2d ones(1.0, 1.0);
    CHECK(variance_functional(model_2t(), 1, ones, ones) == doctest::Approx(1.0));
    const auto single = parse_finite_model("model = finite\ntypes = 2\nrate.1 = 1\nrate.2 = 3\n"
                                           "offspring.1 = 1/2 :\noffspring.1 = 1/2 : 0 1\noffspring.2 = 1 : 1 0\n");
    CHECK(variance_functional(single, ones, ones).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("many-to-two formula") {
    const Eigen::VectorXd one1 = Eigen::VectorXd::Ones(1);
    for (double t : {0.0, 1.0, 7.5, 40.0})
        CHECK(many_to_two_exact(model_bin(), one1, one1, t)[0] == doctest::Approx(1.0 + t).epsilon(1e-8));

    const auto m = model_2t();
    const Eigen::Vector2d f(0.5, 2.0), g(1.5, 0.25);
    const Eigen::VectorXd at0 = many_to_two_exact(m, f, g, 0.0);
    CHECK(at0[0] == doctest::Approx(0.75));
    CHECK(at0[1] == doctest::Approx(0.5));

    // Second moment of <phi, X_10> from the exact formula and by simulation.
    const Eigen::Vector2d phi(1.0, 1.0);
    const double exact = many_to_two_exact(m, phi, phi, 10.0)[0];
    const auto s = sample_functional(m, 0, 10.0, [](int) { return 1.0; }, 200000, 99, WorkerPool(1));
    std::vector<double> sq(s.values.size());
    for (std::size_t i = 0; i < sq.size(); ++i) sq[i] = s.values[i] * s.values[i];
    const Estimate mc = mean_estimate(sq);
    CHECK(std::abs(mc.value - exact) <= 3.0 * mc.se);

    // Jensen: second moment dominates the squared first moment.
    for (const auto& model : {model_2t(), model_3t()}) {
        const Eigen::VectorXd h = Eigen::VectorXd::LinSpaced(model.types(), 0.2, 1.3);
        for (double t : {0.5, 5.0, 30.0}) {
            const Eigen::VectorXd second = many_to_two_exact(model, h, h, t);
            const Eigen::VectorXd first = mean_semigroup(model, t, h);
            for (int i = 0; i < model.types(); ++i) CHECK(second[i] >= first[i] * first[i] * (1.0 - 1e-8));
        }
    }
}

TEST_CASE("survival ODE") {
    const auto bin = model_bin();
    const auto ode = nonlinear_ode(bin, 10.0, 0.005);
    CHECK(ode.u[ode.index_of(10.0)][0] == doctest::Approx(1.0 / 6.0).epsilon(1e-8));
    CHECK(std::abs(ode.u[ode.index_of(10.0)][0] - 1.0 / 6.0) < 1e-8);
    CHECK(ode.u[0][0] == 1.0);
    CHECK_THROWS_AS(nonlinear_ode(bin, 10.0, 0.05), RangeError);

    for (const auto& m : {model_2t(), model_3t()}) {
        const auto eig = exact_eigen(m);
        const auto sol = nonlinear_ode(m, 50.0, default_ode_step(m), &eig);
        CHECK(sol.a.front() == doctest::Approx(1.0));
        for (std::size_t k = 1; k < sol.u.size(); ++k)
            for (int i = 0; i < m.types(); ++i) {
                REQUIRE(sol.u[k][i] <= sol.u[k - 1][i]);
                REQUIRE(sol.u[k][i] >= 0.0);
            }
    }
}

TEST_CASE("ODE survival agrees with simulated survival") {
    const auto m = model_2t();
    const auto ode = nonlinear_ode(m, 20.0, default_ode_step(m));
    const auto ext = sample_extinction(m, 1, 20.0, 100000, 4, WorkerPool(1));
    for (double t : {1.0, 5.0, 20.0}) {
        std::vector<double> alive;
        for (const auto& e : ext) alive.push_back(e.survives(t) ? 1.0 : 0.0);
        const Estimate p = mean_estimate(alive);
        CHECK(std::abs(p.value - ode.u[ode.index_of(t)][1]) <= 3.0 * p.se);
    }
}

TEST_CASE("operator inequalities on random functions") {
    for (const auto& m : {model_bin(), model_2t(), model_3t()}) {
        const auto rep = testing::check_operator_inequalities(m, 1000, 2024);
        INFO(m.name(), " ", rep.failures.empty() ? "" : rep.failures.front());
        CHECK(rep.ok());
    }
}

TEST_CASE("yield multiplier scales the mean matrix") {
    const auto m = model_3t();
    for (double k : {0.5, 1.0, 1.37, 2.2}) {
        const auto scaled = m.with_yield_multiplier(k);
        CHECK((scaled.mean_matrix() - k * m.mean_matrix()).cwiseAbs().maxCoeff() < 1e-12);
        CHECK(scaled.yield_multiplier() == doctest::Approx(k));
    }
    CHECK_THROWS_AS(m.with_yield_multiplier(0.0), RangeError);
}
