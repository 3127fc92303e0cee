#include <doctest.h>

#include <cmath>

#include "mbp/branching.hpp"
#include "mbp/error.hpp"
#include "mbp/nbp.hpp"

using namespace mbp;

namespace {

NbpModel ball_model(double sigma_s, double sigma_f, const char* yield, const char* extra = "") {
    std::string text = "model = nbp\nname = test-ball\ngeometry = ball\nradius = 1\nv_min = 0.5\nv_max = 2\nn_max = 4\n";
    text += "region.1.sigma_s = " + std::to_string(sigma_s) + "\n";
    text += "region.1.sigma_f = " + std::to_string(sigma_f) + "\n";
    text += std::string("region.1.yield = ") + yield + "\n" + extra;
    return parse_nbp_model(text);
}

}  // namespace

TEST_CASE("exit times in closed form") {
    const auto box = Geometry::box(-1.0, 1.0);
    CHECK(exit_time(box, Vec3(0, 0, 0), Vec3(1, 0, 0)) == doctest::Approx(1.0));
    CHECK(exit_time(box, Vec3(0.5, 0, 0), Vec3(-1, 0, 0)) == doctest::Approx(1.5));
    const auto ball = Geometry::ball(2.5);
    for (double v : {0.5, 1.0, 3.0}) CHECK(exit_time(ball, Vec3::Zero(), Vec3(0, v, 0)) == doctest::Approx(2.5 / v));
    CHECK_THROWS_AS(exit_time(ball, Vec3::Zero(), Vec3::Zero()), RangeError);
}

TEST_CASE("exit points lie on the boundary") {
    RngStream rng(8, 0);
    const auto ball = Geometry::ball(1.0, {0.3, 0.7});
    const auto box = Geometry::box(-1.0, 2.0, {0.0, 1.0});
    for (int i = 0; i < 10000; ++i) {
        const Vec3 v = random_direction(rng) * rng.uniform(0.1, 5.0);
        const Vec3 rb = ball.sample_uniform(rng);
        const Vec3 eb = rb + v * exit_time(ball, rb, v);
        REQUIRE(std::abs(eb.norm() - 1.0) <= 1e-9);
        const Vec3 rx = box.sample_uniform(rng);
        const Vec3 ex = rx + v * exit_time(box, rx, v);
        const double face = std::max({std::abs(ex.x() - 0.5) - 1.5, std::abs(ex.y() - 0.5) - 1.5,
                                      std::abs(ex.z() - 0.5) - 1.5});
        REQUIRE(std::abs(face) <= 1e-9);
    }
}

TEST_CASE("ballistic particles die exactly at the exit time") {
    const auto m = ball_model(0.0, 0.0, "0 1");
    for (int i = 0; i < 200; ++i) {
        RngStream rng(3, static_cast<std::uint64_t>(i));
        const PhasePoint x{Vec3(rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 0.1), random_direction(rng) * 1.3};
        const auto ext = sample_extinction(m, x, 100.0, 1, static_cast<std::uint64_t>(i), WorkerPool(1)).front();
        REQUIRE(ext.time.has_value());
        CHECK(*ext.time == doctest::Approx(exit_time(m.geometry(), x.r, x.v)).epsilon(1e-12));
    }
}

TEST_CASE("scatter-only transport is self-consistent across seeds") {
    const auto m = ball_model(4.0, 0.0, "0 1");
    const PhasePoint x0{Vec3::Zero(), Vec3(1, 0, 0)};
    auto lifetime = [&](std::uint64_t seed) {
        std::vector<double> ts;
        for (const auto& e : sample_extinction(m, x0, 1e6, 20000, seed, WorkerPool(1))) ts.push_back(*e.time);
        return mean_estimate(ts);
    };
    const Estimate a = lifetime(1), b = lifetime(2);
    CHECK(z_score(a, b) <= 3.0);
    CHECK(a.value > 1.0 / 2.0);  // no faster than the fastest straight exit at v_max
}

TEST_CASE("fission yields obey the declared law") {
    const auto m = ball_model(0.0, 3.0, "0 0 1");
    RngStream rng(4, 0);
    std::vector<PhasePoint> kids;
    const PhasePoint x{Vec3(0.1, 0.2, 0.3), Vec3(0, 1, 0)};
    for (int i = 0; i < 1000; ++i) {
        m.sample_offspring(x, rng, kids);
        REQUIRE(kids.size() == 2);
        for (const auto& k : kids) {
            REQUIRE(k.r == x.r);
            REQUIRE(m.is_valid(k));
        }
    }
    CHECK(m.beta(0) == doctest::Approx(3.0));
    CHECK(m.alpha(0) == doctest::Approx(6.0));
}

TEST_CASE("isotropic scattering directions are uniform on the sphere") {
    const auto m = ball_model(1.0, 0.0, "0 1");
    RngStream rng(12, 0);
    std::vector<double> mu;
    const Vec3 v(0.0, 0.0, 1.2);
    for (int i = 0; i < 100000; ++i) {
        const Vec3 w = m.sample_scatter_velocity(v, 0, rng);
        REQUIRE(w.norm() >= 0.5 - 1e-12);
        REQUIRE(w.norm() <= 2.0 + 1e-12);
        mu.push_back(w.z() / w.norm());
    }
    CHECK(ks_test(mu, [](double c) { return std::clamp((c + 1.0) / 2.0, 0.0, 1.0); }).p_value > 0.01);
}

TEST_CASE("weighted walk with unit yield is the plain walk") {
    // Yield exactly one: beta = 0, and the branching process is a single particle.
    const auto m = ball_model(2.0, 3.0, "0 1");
    CHECK(m.beta(0) == 0.0);
    const PhasePoint x0{Vec3(0.2, 0, 0), Vec3(0, 1, 0)};
    const WorkerPool pool(1);
    for (double t : {0.5, 1.5}) {
        const Estimate nrw = nrw_many_to_one(m, [](const PhasePoint&) { return 1.0; }, x0, t, 40000, 5, pool);
        const auto direct = batch_estimate(m, x0, t, [](const PhasePoint&) { return 1.0; }, 40000, 6, pool);
        CHECK(z_score(nrw, direct.survival) <= 3.0);
        CHECK(nrw.value <= 1.0);
    }
}

TEST_CASE("many-to-one agrees with direct simulation") {
    const WorkerPool pool(1);
    const auto speed = [](const PhasePoint& x) { return x.v.norm(); };
    const auto one = [](const PhasePoint&) { return 1.0; };
    for (const auto& m : {ball_model(3.0, 0.0, "0 1"), nbp_ball()}) {
        const PhasePoint x0{Vec3(0.3, 0, 0), Vec3(0, 1.1, 0)};
        for (double t : {0.5, 1.0, 2.0}) {
            INFO(m.name(), " t=", t);
            CHECK(z_score(nrw_many_to_one(m, one, x0, t, 20000, 7, pool),
                          batch_estimate(m, x0, t, one, 20000, 8, pool).functional) <= 3.0);
            CHECK(z_score(nrw_many_to_one(m, speed, x0, t, 20000, 9, pool),
                          batch_estimate(m, x0, t, speed, 20000, 10, pool).functional) <= 3.0);
        }
    }
}

TEST_CASE("bundled NBP models parse and round-trip") {
    for (const auto& m : {nbp_ball(), nbp_box()}) {
        const auto again = parse_nbp_model(m.to_text());
        CHECK(again.to_text() == m.to_text());
        CHECK(again.n_max() <= m.declared_n_max());
    }
    CHECK(nbp_box().geometry().region_count() == 2);
    const auto cluster = nbp_ball().with_fission_mode(FissionMode::Cluster, 0.2);
    CHECK(cluster.material(0).fission == FissionMode::Cluster);
    CHECK(cluster.mean_yield(0) == doctest::Approx(nbp_ball().mean_yield(0)));
}

TEST_CASE("NBP schema errors carry line numbers") {
    try {
        parse_nbp_model("model = nbp\ngeometry = ball\nradius = 1\nv_min = 1\nv_max = 2\nn_max = 2\n"
                        "region.1.sigma_s = 1\nregion.1.sigma_f = 1\nregion.1.yield = 0.5 0.6\n");
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 9);
    }
    CHECK_THROWS_AS(ball_model(1.0, 1.0, "0 1", "region.1.fission = sideways\n"), ParseError);
    CHECK_THROWS_AS(parse_nbp_model("model = nbp\ngeometry = torus\n"), ParseError);
}

TEST_CASE("phase points outside the domain are rejected") {
    const auto m = nbp_ball();
    CHECK_FALSE(m.is_valid({Vec3(2, 0, 0), Vec3(1, 0, 0)}));
    CHECK_FALSE(m.is_valid({Vec3::Zero(), Vec3(3, 0, 0)}));
    CHECK(m.is_valid({Vec3::Zero(), Vec3(1, 0, 0)}));
    RngStream rng(1, 0);
    SimulationOptions opt;
    opt.t_max = 1.0;
    CHECK_THROWS_AS(simulate_tree(m, PhasePoint{Vec3(2, 0, 0), Vec3(1, 0, 0)}, opt, rng), SimulationError);
}
