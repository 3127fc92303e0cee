#include <doctest.h>

#include <cmath>

#include "mbp/eigen.hpp"
#include "mbp/error.hpp"
#include "mbp/finite_model.hpp"
#include "mbp/nbp.hpp"

using namespace mbp;

TEST_CASE("exact eigen-elements of the bundled finite models") {
    const auto bin = exact_eigen(model_bin());
    CHECK(bin.lambda == doctest::Approx(0.0));
    CHECK(bin.phi[0] == doctest::Approx(1.0));
    CHECK(bin.phi_tilde[0] == doctest::Approx(1.0));
    CHECK(bin.sigma == doctest::Approx(1.0));

    const auto two = exact_eigen(model_2t());
    CHECK(std::abs(two.lambda) < 1e-12);
    CHECK(two.phi[0] == doctest::Approx(1.0));
    CHECK(two.phi[1] == doctest::Approx(1.0));
    CHECK(two.phi_tilde[0] == doctest::Approx(0.8));
    CHECK(two.phi_tilde[1] == doctest::Approx(0.2));
    CHECK(two.sigma == doctest::Approx(1.2));

    for (const auto& m : {model_bin(), model_2t(), model_3t()}) {
        const auto e = exact_eigen(m);
        const Eigen::MatrixXd a = m.generator();
        CHECK((a * e.phi - e.lambda * e.phi).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK((e.phi_tilde.transpose() * a - e.lambda * e.phi_tilde.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
        CHECK(e.right_residual <= 1e-10);
        CHECK(e.left_residual <= 1e-10);
        CHECK(std::abs(e.phi_tilde.dot(e.phi) - 1.0) <= 1e-10);
        CHECK(e.phi.minCoeff() > 0.0);
    }

    const auto single = parse_finite_model("model = finite\ntypes = 2\nrate.1 = 1\nrate.2 = 2\n"
                                           "offspring.1 = 1 : 0 1\noffspring.2 = 1/4 : 0 1\noffspring.2 = 3/4 : 1 0\n");
    const auto e = exact_eigen(single);
    CHECK(std::abs(e.lambda) < 1e-12);
    CHECK(e.sigma == 0.0);
}

TEST_CASE("left eigenvector is stationary and convergence is geometric") {
    for (const auto& m : {model_2t(), model_3t()}) {
        const auto e = exact_eigen(m);
        Eigen::VectorXd g = Eigen::VectorXd::Zero(m.types());
        g[0] = 1.0;
        for (double t : {1.0, 10.0, 100.0})
            CHECK(std::abs(e.phi_tilde.dot(mean_semigroup(m, t, g)) - e.phi_tilde[0]) <= 1e-9);

        RngStream rng(77, 0);
        for (int trial = 0; trial < 5; ++trial) {
            Eigen::VectorXd h(m.types());
            for (int i = 0; i < m.types(); ++i) h[i] = rng.uniform(0.0, 2.0);
            auto dev = [&](double t) {
                const Eigen::VectorXd p = mean_semigroup(m, t, h);
                return (p.cwiseQuotient(e.phi).array() - e.phi_tilde.dot(h)).abs().maxCoeff();
            };
            CHECK(dev(20.0) < 0.9 * dev(10.0));
        }
    }
}

TEST_CASE("finite calibration restores criticality") {
    const auto boosted = parse_finite_model("model = finite\ntypes = 1\nrate.1 = 1\noffspring.1 = 0.4 :\n"
                                            "offspring.1 = 0.6 : 2\n");
    const auto c = calibrate_critical(boosted);
    CHECK(c.multiplier == doctest::Approx(1.0 / 1.2).epsilon(1e-9));
    CHECK(std::abs(c.eigen.lambda) <= 1e-10);

    const auto already = calibrate_critical(model_2t());
    CHECK(already.multiplier == doctest::Approx(1.0).epsilon(1e-9));

    const auto dead = parse_finite_model("model = finite\ntypes = 1\nrate.1 = 1\noffspring.1 = 1 :\n");
    CHECK_THROWS_AS(calibrate_critical(dead), ConvergenceError);
}

namespace {

NbpModel small_ball(double sigma_f, const char* yield) {
    std::string text = "model = nbp\nname = small\ngeometry = ball\nradius = 1\nv_min = 0.5\nv_max = 2\nn_max = 4\n"
                       "region.1.sigma_s = 5\n";
    text += "region.1.sigma_f = " + std::to_string(sigma_f) + "\nregion.1.yield = " + yield + "\n";
    return parse_nbp_model(text);
}

}  // namespace

TEST_CASE("NBP eigenvalue estimates respond to the yield") {
    const WorkerPool pool(1);
    const auto sub = estimate_lambda_nbp(small_ball(0.05, "0 0 1"), 2.0, 1.0, 20000, 1, pool);
    CHECK(sub.value < 0.0);
    CHECK(std::abs(sub.value) > 2.0 * sub.se);

    const auto leak = estimate_lambda_nbp(small_ball(0.0, "0 1"), 2.0, 1.0, 20000, 2, pool);
    CHECK(leak.value < 0.0);

    const auto base = small_ball(4.0, "0.5 0.2 0.3");
    const auto lo = estimate_lambda_nbp(base, 2.0, 1.0, 20000, 3, pool);
    const auto hi = estimate_lambda_nbp(base.with_yield_multiplier(2.0), 2.0, 1.0, 20000, 3, pool);
    CHECK(hi.value - lo.value > 2.0 * std::hypot(lo.se, hi.se));
}

TEST_CASE("NBP grid triple and the variance constant") {
    const WorkerPool pool(1);
    NbpEigenOptions opt;
    opt.t_probe = 1.0;
    opt.delta = 0.5;
    opt.walks_per_cell = 300;
    opt.walks_tilde = 20000;
    opt.sigma_samples = 20000;

    const auto no_pairs = small_ball(3.0, "0.2 0.8");
    const auto e0 = estimate_eigen_nbp(no_pairs, PhaseGrid::for_model(no_pairs), opt, 4, pool);
    CHECK(e0.sigma == 0.0);
    CHECK(e0.phi.minCoeff() > 0.0);
    CHECK(std::abs(e0.normalization - 1.0) <= 0.02);
    CHECK_FALSE(e0.exact);

    const auto pairs = small_ball(3.0, "0.4 0.3 0.3");
    const auto e1 = estimate_eigen_nbp(pairs, PhaseGrid::for_model(pairs), opt, 5, pool);
    CHECK(e1.sigma > 0.0);
    CHECK(sampled_pair_condition(pairs, e1, 5, 2000, 6, pool) > 0.0);
}

TEST_CASE("phase grid cells have equal volume") {
    const auto m = nbp_box();
    const auto grid = PhaseGrid::for_model(m);
    RngStream rng(9, 0);
    std::vector<int> hits(static_cast<std::size_t>(grid.cells()), 0);
    const int n = 64000;
    for (int i = 0; i < n; ++i) ++hits[static_cast<std::size_t>(grid.cell_of(m.sample_uniform_phase(rng)))];
    const double expect = static_cast<double>(n) / grid.cells();
    for (int h : hits) CHECK(std::abs(h - expect) <= 5.0 * std::sqrt(expect));
    for (int c = 0; c < grid.cells(); ++c) CHECK(grid.cell_of(grid.sample_in_cell(c, rng)) == c);
}
