#pragma once

// Neutron branching process: straight-line flight in a bounded domain, isotropic
// scattering and fission with piecewise-constant rates per region, killing on
// exit. Also the weighted neutron random walk used for mean-semigroup estimates.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mbp/branching.hpp"
#include "mbp/parallel.hpp"
#include "mbp/rng.hpp"
#include "mbp/stats.hpp"

namespace mbp {

using Vec3 = Eigen::Vector3d;

struct PhasePoint {
    Vec3 r = Vec3::Zero();
    Vec3 v = Vec3::UnitX();
};

/// Ball of radius R split into concentric shells, or the cube [lo, hi]^3 split
/// into slabs along x. Region k lies between boundaries k and k+1.
class Geometry {
public:
    enum class Kind { Ball, Box };

    /// `shells` are interior shell radii in (0, R), increasing.
    static Geometry ball(double radius, std::vector<double> shells = {});
    /// `planes` are interior x-planes in (lo, hi), increasing.
    static Geometry box(double lo, double hi, std::vector<double> planes = {});

    Kind kind() const noexcept { return kind_; }
    int region_count() const noexcept { return static_cast<int>(bounds_.size()) - 1; }
    /// Region boundaries including the outer ones: radii {0, ..., R} or x-planes {lo, ..., hi}.
    const std::vector<double>& bounds() const noexcept { return bounds_; }
    double radius() const noexcept { return bounds_.back(); }
    double lo() const noexcept { return lo_; }
    double hi() const noexcept { return hi_; }
    double volume() const noexcept;

    bool contains(const Vec3& r, double tol = 0.0) const noexcept;
    /// Distance by which r lies outside D (0 inside).
    double distance_outside(const Vec3& r) const noexcept;
    /// Region index of an interior point, -1 outside.
    int region_of(const Vec3& r) const noexcept;

    /// First time the ray r + v t leaves D.
    double exit_time(const Vec3& r, const Vec3& v) const;

    /// First time the ray leaves region k and the region it enters (-1 for exit).
    struct Crossing {
        double time;
        int next;
    };
    Crossing region_exit(const Vec3& r, const Vec3& v, int k) const;

    /// Uniform point in D.
    Vec3 sample_uniform(RngStream& rng) const;

private:
    Kind kind_ = Kind::Ball;
    std::vector<double> bounds_;
    double lo_ = -1.0, hi_ = 1.0;
};

/// Free-function form; throws RangeError for a zero velocity.
double exit_time(const Geometry& geometry, const Vec3& r, const Vec3& v);

enum class FissionMode {
    Iid,      ///< independent isotropic velocities
    Cluster,  ///< common random direction plus Gaussian angular spread, common speed
};

struct Material {
    double sigma_s = 0.0;  ///< scattering rate
    double sigma_f = 0.0;  ///< fission rate
    /// p_0 .. p_N of the number of fission neutrons.
    std::vector<double> yield{0.0, 1.0};
    /// Probability that a scatter keeps the current speed; otherwise speed is redrawn.
    double scatter_keep_speed = 0.0;
    FissionMode fission = FissionMode::Iid;
    double cluster_spread = 0.3;

    double mean_yield() const noexcept;
    double factorial_moment2() const noexcept;  ///< E[N(N-1)]
};

/// Uniform unit vector.
Vec3 random_direction(RngStream& rng);

class NbpModel {
public:
    using State = PhasePoint;

    NbpModel(std::string name, Geometry geometry, std::vector<Material> materials, double v_min, double v_max,
             std::size_t n_max);

    const std::string& name() const noexcept { return name_; }
    const Geometry& geometry() const noexcept { return geometry_; }
    const std::vector<Material>& materials() const noexcept { return materials_; }
    const Material& material(int region) const { return materials_.at(static_cast<std::size_t>(region)); }
    double v_min() const noexcept { return v_min_; }
    double v_max() const noexcept { return v_max_; }
    double yield_multiplier() const noexcept { return kappa_; }
    std::size_t declared_n_max() const noexcept { return n_max_; }

    // Simulation interface.
    Flight<PhasePoint> sample_flight(const PhasePoint& x, double max_dt, RngStream& rng) const;
    void sample_offspring(const PhasePoint& x, RngStream& rng, std::vector<PhasePoint>& out) const;
    double gamma(const PhasePoint& x) const;
    double m_scalar(const PhasePoint& x) const;
    std::size_t n_max() const noexcept;
    bool is_valid(const PhasePoint& x) const noexcept;

    /// Each fission neutron is replaced by K copies, K in {floor(k), ceil(k)}, E[K] = k.
    NbpModel with_yield_multiplier(double kappa) const;
    /// Same rates and yields, different joint law of fission velocities.
    NbpModel with_fission_mode(FissionMode mode, double spread) const;

    /// Mean number of fission neutrons in a region, including the multiplier.
    double mean_yield(int region) const;
    /// beta = sigma_f (m - 1).
    double beta(int region) const;
    /// alpha = sigma_s + sigma_f m, jump rate of the weighted walk.
    double alpha(int region) const;

    double sample_speed(RngStream& rng) const;
    Vec3 sample_scatter_velocity(const Vec3& v, int region, RngStream& rng) const;
    /// One draw from the normalised mean fission kernel (uniform direction and speed law).
    Vec3 sample_fission_velocity(RngStream& rng) const;
    /// Number of fission neutrons after applying the multiplier.
    int sample_yield(int region, RngStream& rng) const;
    /// Velocities of one fission event at region `region` (count given).
    void sample_fission_velocities(int region, int count, RngStream& rng, std::vector<Vec3>& out) const;

    /// Uniform point of D x V.
    PhasePoint sample_uniform_phase(RngStream& rng) const;

    std::string to_text() const;

private:
    std::string name_;
    Geometry geometry_;
    std::vector<Material> materials_;
    double v_min_, v_max_;
    std::size_t n_max_;
    double kappa_ = 1.0;
};

/// Parses the NBP key-value schema (see models/nbp-ball.model for an annotated example).
NbpModel parse_nbp_model(std::string_view text);

std::string_view bundled_nbp_text(std::string_view name);  ///< empty if unknown
std::vector<std::string> bundled_nbp_names();
NbpModel nbp_ball();
NbpModel nbp_box();

// ---------------------------------------------------------------------------
// Weighted neutron random walk

/// Visits the walk at increasing `times`: visit(k, state, log_weight) while alive.
/// The walk jumps at rate alpha with the sigma-weighted mixture of scatter and
/// fission kernels and carries weight exp(int beta). Returns the number of
/// checkpoints reached alive. Throws SimulationError when int beta exceeds 700.
std::size_t nrw_walk(const NbpModel& model, const PhasePoint& x0, std::span<const double> times, RngStream& rng,
                     const std::function<void(std::size_t, const PhasePoint&, double)>& visit);

/// Monte Carlo estimate of psi_t[f](x0) from n weighted walks.
Estimate nrw_many_to_one(const NbpModel& model, const std::function<double(const PhasePoint&)>& f,
                         const PhasePoint& x0, double t, std::size_t n, std::uint64_t seed, const WorkerPool& pool);

}  // namespace mbp
