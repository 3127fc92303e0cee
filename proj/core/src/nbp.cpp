#include "mbp/nbp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "mbp/error.hpp"
#include "text_util.hpp"

namespace mbp {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kDriftTol = 1e-9;

/// Larger root of a t^2 + 2 bq t + c = 0 with c <= 0 (start inside the sphere).
double outgoing_root(double a, double bq, double c) {
    const double disc = std::max(0.0, bq * bq - a * c);
    const double sq = std::sqrt(disc);
    if (bq >= 0.0) {
        const double den = bq + sq;
        return den > 0.0 ? std::max(0.0, -c / den) : 0.0;
    }
    return std::max(0.0, (-bq + sq) / a);
}

void require_sorted_inside(const std::vector<double>& xs, double lo, double hi, const char* what) {
    double prev = lo;
    for (double x : xs) {
        if (!(x > prev) || !(x < hi)) throw ModelError(what);
        prev = x;
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// Geometry

Geometry Geometry::ball(double radius, std::vector<double> shells) {
    if (!(radius > 0.0) || !std::isfinite(radius)) throw ModelError("ball radius must be positive");
    require_sorted_inside(shells, 0.0, radius, "ball shells must be increasing radii inside (0, R)");
    Geometry g;
    g.kind_ = Kind::Ball;
    g.bounds_.push_back(0.0);
    g.bounds_.insert(g.bounds_.end(), shells.begin(), shells.end());
    g.bounds_.push_back(radius);
    g.lo_ = -radius;
    g.hi_ = radius;
    return g;
}

Geometry Geometry::box(double lo, double hi, std::vector<double> planes) {
    if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) throw ModelError("box needs lo < hi");
    require_sorted_inside(planes, lo, hi, "box planes must be increasing x values inside (lo, hi)");
    Geometry g;
    g.kind_ = Kind::Box;
    g.bounds_.push_back(lo);
    g.bounds_.insert(g.bounds_.end(), planes.begin(), planes.end());
    g.bounds_.push_back(hi);
    g.lo_ = lo;
    g.hi_ = hi;
    return g;
}

double Geometry::volume() const noexcept {
    if (kind_ == Kind::Ball) return 4.0 / 3.0 * std::numbers::pi * std::pow(radius(), 3);
    return std::pow(hi_ - lo_, 3);
}

bool Geometry::contains(const Vec3& r, double tol) const noexcept {
    if (kind_ == Kind::Ball) return r.norm() < radius() + tol;
    for (int i = 0; i < 3; ++i)
        if (!(r[i] > lo_ - tol && r[i] < hi_ + tol)) return false;
    return true;
}

double Geometry::distance_outside(const Vec3& r) const noexcept {
    if (kind_ == Kind::Ball) return std::max(0.0, r.norm() - radius());
    double d = 0.0;
    for (int i = 0; i < 3; ++i) d = std::max({d, lo_ - r[i], r[i] - hi_});
    return d;
}

int Geometry::region_of(const Vec3& r) const noexcept {
    if (!contains(r)) return -1;
    const double s = kind_ == Kind::Ball ? r.norm() : r[0];
    const auto it = std::upper_bound(bounds_.begin() + 1, bounds_.end() - 1, s);
    return static_cast<int>(it - bounds_.begin()) - 1;
}

double Geometry::exit_time(const Vec3& r, const Vec3& v) const {
    const double a = v.squaredNorm();
    if (!(a > 0.0)) throw RangeError("exit_time: zero velocity");
    if (kind_ == Kind::Ball) return outgoing_root(a, r.dot(v), r.squaredNorm() - radius() * radius());
    double t = kInf;
    for (int i = 0; i < 3; ++i) {
        if (v[i] > 0.0) t = std::min(t, (hi_ - r[i]) / v[i]);
        else if (v[i] < 0.0) t = std::min(t, (lo_ - r[i]) / v[i]);
    }
    return std::max(0.0, t);
}

Geometry::Crossing Geometry::region_exit(const Vec3& r, const Vec3& v, int k) const {
    const int last = region_count() - 1;
    if (kind_ == Kind::Ball) {
        const double a = v.squaredNorm();
        const double bq = r.dot(v);
        const double rr = r.squaredNorm();
        const double outer = bounds_[static_cast<std::size_t>(k + 1)];
        double t = outgoing_root(a, bq, std::min(0.0, rr - outer * outer));
        int next = k == last ? -1 : k + 1;
        if (k > 0 && bq < 0.0) {
            const double inner = bounds_[static_cast<std::size_t>(k)];
            const double c = rr - inner * inner;
            const double disc = bq * bq - a * c;
            if (disc > 0.0 && c > 0.0) {
                const double t_in = c / (-bq + std::sqrt(disc));
                if (t_in < t) {
                    t = t_in;
                    next = k - 1;
                }
            }
        }
        return {t, next};
    }
    const double te = exit_time(r, v);
    if (v[0] > 0.0 && k < last) {
        const double tp = (bounds_[static_cast<std::size_t>(k + 1)] - r[0]) / v[0];
        if (tp < te) return {std::max(0.0, tp), k + 1};
    } else if (v[0] < 0.0 && k > 0) {
        const double tp = (bounds_[static_cast<std::size_t>(k)] - r[0]) / v[0];
        if (tp < te) return {std::max(0.0, tp), k - 1};
    }
    return {te, -1};
}

Vec3 Geometry::sample_uniform(RngStream& rng) const {
    if (kind_ == Kind::Ball) return radius() * std::cbrt(rng.uniform()) * random_direction(rng);
    return Vec3(rng.uniform(lo_, hi_), rng.uniform(lo_, hi_), rng.uniform(lo_, hi_));
}

double exit_time(const Geometry& geometry, const Vec3& r, const Vec3& v) { return geometry.exit_time(r, v); }

Vec3 random_direction(RngStream& rng) {
    const double mu = 2.0 * rng.uniform() - 1.0;
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    const double s = std::sqrt(std::max(0.0, 1.0 - mu * mu));
    return Vec3(s * std::cos(phi), s * std::sin(phi), mu);
}

// ---------------------------------------------------------------------------
// Materials and model

double Material::mean_yield() const noexcept {
    double m = 0.0;
    for (std::size_t n = 0; n < yield.size(); ++n) m += static_cast<double>(n) * yield[n];
    return m;
}

double Material::factorial_moment2() const noexcept {
    double m = 0.0;
    for (std::size_t n = 0; n < yield.size(); ++n) m += static_cast<double>(n) * (static_cast<double>(n) - 1.0) * yield[n];
    return m;
}

NbpModel::NbpModel(std::string name, Geometry geometry, std::vector<Material> materials, double v_min, double v_max,
                   std::size_t n_max)
    : name_(std::move(name)), geometry_(std::move(geometry)), materials_(std::move(materials)), v_min_(v_min),
      v_max_(v_max), n_max_(n_max) {
    if (static_cast<int>(materials_.size()) != geometry_.region_count())
        throw ModelError("nbp model: need one material per region");
    if (!(v_min_ > 0.0) || !(v_max_ >= v_min_) || !std::isfinite(v_max_))
        throw ModelError("nbp model: need 0 < v_min <= v_max");
    if (n_max_ < 1) throw ModelError("nbp model: n_max must be at least 1");
    for (const auto& m : materials_) {
        if (!(m.sigma_s >= 0.0) || !(m.sigma_f >= 0.0) || !std::isfinite(m.sigma_s) || !std::isfinite(m.sigma_f))
            throw ModelError("nbp model: rates must be finite and nonnegative");
        if (m.yield.empty() || m.yield.size() > n_max_ + 1)
            throw ModelError("nbp model: yield distribution longer than n_max + 1");
        double total = 0.0;
        for (double p : m.yield) {
            if (!(p >= 0.0)) throw ModelError("nbp model: negative yield probability");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-12) throw ModelError("nbp model: yield probabilities must sum to 1");
        if (!(m.scatter_keep_speed >= 0.0 && m.scatter_keep_speed <= 1.0))
            throw ModelError("nbp model: scatter_keep_speed must be in [0, 1]");
        if (!(m.cluster_spread >= 0.0) || !std::isfinite(m.cluster_spread))
            throw ModelError("nbp model: cluster spread must be nonnegative");
    }
}

std::size_t NbpModel::n_max() const noexcept {
    return n_max_ * static_cast<std::size_t>(std::ceil(kappa_ - 1e-12));
}

bool NbpModel::is_valid(const PhasePoint& x) const noexcept {
    const double s = x.v.norm();
    return geometry_.contains(x.r, kDriftTol) && s >= v_min_ * (1.0 - 1e-12) && s <= v_max_ * (1.0 + 1e-12);
}

double NbpModel::gamma(const PhasePoint& x) const {
    const int k = geometry_.region_of(x.r);
    return k < 0 ? 0.0 : material(k).sigma_f;
}

double NbpModel::m_scalar(const PhasePoint& x) const {
    const int k = geometry_.region_of(x.r);
    return k < 0 ? 0.0 : mean_yield(k);
}

double NbpModel::mean_yield(int region) const { return kappa_ * material(region).mean_yield(); }
double NbpModel::beta(int region) const { return material(region).sigma_f * (mean_yield(region) - 1.0); }
double NbpModel::alpha(int region) const {
    return material(region).sigma_s + material(region).sigma_f * mean_yield(region);
}

NbpModel NbpModel::with_yield_multiplier(double kappa) const {
    if (!(kappa > 0.0) || !std::isfinite(kappa)) throw RangeError("yield multiplier must be positive and finite");
    NbpModel out = *this;
    out.kappa_ = kappa_ * kappa;
    return out;
}

NbpModel NbpModel::with_fission_mode(FissionMode mode, double spread) const {
    NbpModel out = *this;
    for (auto& m : out.materials_) {
        m.fission = mode;
        m.cluster_spread = spread;
    }
    return out;
}

double NbpModel::sample_speed(RngStream& rng) const {
    return v_min_ == v_max_ ? v_min_ : rng.uniform(v_min_, v_max_);
}

Vec3 NbpModel::sample_scatter_velocity(const Vec3& v, int region, RngStream& rng) const {
    const double keep = material(region).scatter_keep_speed;
    double speed;
    if (keep >= 1.0) speed = v.norm();
    else if (keep <= 0.0) speed = sample_speed(rng);
    else speed = rng.uniform() < keep ? v.norm() : sample_speed(rng);
    return speed * random_direction(rng);
}

Vec3 NbpModel::sample_fission_velocity(RngStream& rng) const { return sample_speed(rng) * random_direction(rng); }

int NbpModel::sample_yield(int region, RngStream& rng) const {
    const auto& p = material(region).yield;
    double u = rng.uniform();
    int n = 0;
    while (n + 1 < static_cast<int>(p.size()) && u >= p[static_cast<std::size_t>(n)]) {
        u -= p[static_cast<std::size_t>(n)];
        ++n;
    }
    if (kappa_ == 1.0) return n;
    const int base = static_cast<int>(std::floor(kappa_));
    const double q = kappa_ - base;
    int total = 0;
    for (int i = 0; i < n; ++i) total += base + (q > 0.0 && rng.uniform() < q ? 1 : 0);
    return total;
}

void NbpModel::sample_fission_velocities(int region, int count, RngStream& rng, std::vector<Vec3>& out) const {
    out.clear();
    if (count <= 0) return;
    const Material& m = material(region);
    if (m.fission == FissionMode::Iid) {
        for (int i = 0; i < count; ++i) out.push_back(sample_fission_velocity(rng));
        return;
    }
    const Vec3 omega = random_direction(rng);
    const double speed = sample_speed(rng);
    for (int i = 0; i < count; ++i) {
        Vec3 d = omega + m.cluster_spread * Vec3(rng.normal(), rng.normal(), rng.normal());
        const double n = d.norm();
        d = n > 0.0 ? Vec3(d / n) : omega;
        out.push_back(speed * d);
    }
}

Flight<PhasePoint> NbpModel::sample_flight(const PhasePoint& x, double max_dt, RngStream& rng) const {
    PhasePoint p = x;
    int k = geometry_.region_of(p.r);
    if (k < 0) throw SimulationError("nbp: flight started outside the domain");
    double elapsed = 0.0;
    for (;;) {
        const Material& m = material(k);
        const double total = m.sigma_s + m.sigma_f;
        const double tau = rng.exponential(total);
        const auto cross = geometry_.region_exit(p.r, p.v, k);
        const double remaining = max_dt - elapsed;
        if (tau < cross.time && tau < remaining) {
            p.r += tau * p.v;
            elapsed += tau;
            if (rng.uniform() * total < m.sigma_f) return {p, elapsed, FlightEnd::Branch};
            p.v = sample_scatter_velocity(p.v, k, rng);
        } else if (cross.time <= remaining) {
            p.r += cross.time * p.v;
            elapsed += cross.time;
            if (cross.next < 0) return {p, elapsed, FlightEnd::Absorbed};
            k = cross.next;
        } else {
            p.r += remaining * p.v;
            return {p, max_dt, FlightEnd::Horizon};
        }
        const double out = geometry_.distance_outside(p.r);
        if (out > kDriftTol) throw SimulationError("nbp: numerical drift carried a particle outside the domain");
        if (out > 0.0) return {p, elapsed, FlightEnd::Absorbed};
    }
}

void NbpModel::sample_offspring(const PhasePoint& x, RngStream& rng, std::vector<PhasePoint>& out) const {
    thread_local std::vector<Vec3> velocities;
    const int k = geometry_.region_of(x.r);
    if (k < 0) throw SimulationError("nbp: fission outside the domain");
    const int n = sample_yield(k, rng);
    if (static_cast<std::size_t>(n) > n_max()) throw SimulationError("nbp: fission yield exceeds n_max");
    sample_fission_velocities(k, n, rng, velocities);
    out.clear();
    for (const auto& v : velocities) out.push_back({x.r, v});
}

PhasePoint NbpModel::sample_uniform_phase(RngStream& rng) const {
    PhasePoint p;
    p.r = geometry_.sample_uniform(rng);
    // uniform in the velocity annulus: |v|^3 uniform on [v_min^3, v_max^3]
    const double a = v_min_ * v_min_ * v_min_, b = v_max_ * v_max_ * v_max_;
    p.v = std::cbrt(rng.uniform(a, b)) * random_direction(rng);
    return p;
}

std::string NbpModel::to_text() const {
    using detail::format_double;
    std::ostringstream os;
    os << "model = nbp\nname = " << name_ << "\n";
    const auto& b = geometry_.bounds();
    if (geometry_.kind() == Geometry::Kind::Ball) {
        os << "geometry = ball\nradius = " << format_double(geometry_.radius()) << "\n";
        if (b.size() > 2) {
            os << "shells =";
            for (std::size_t i = 1; i + 1 < b.size(); ++i) os << ' ' << format_double(b[i]);
            os << "\n";
        }
    } else {
        os << "geometry = box\nlower = " << format_double(geometry_.lo()) << "\nupper = " << format_double(geometry_.hi())
           << "\n";
        if (b.size() > 2) {
            os << "planes =";
            for (std::size_t i = 1; i + 1 < b.size(); ++i) os << ' ' << format_double(b[i]);
            os << "\n";
        }
    }
    os << "v_min = " << format_double(v_min_) << "\nv_max = " << format_double(v_max_) << "\nn_max = " << n_max_
       << "\n";
    if (kappa_ != 1.0) os << "yield_multiplier = " << format_double(kappa_) << "\n";
    for (std::size_t i = 0; i < materials_.size(); ++i) {
        const auto& m = materials_[i];
        const std::string pre = "region." + std::to_string(i + 1) + ".";
        os << pre << "sigma_s = " << format_double(m.sigma_s) << "\n";
        os << pre << "sigma_f = " << format_double(m.sigma_f) << "\n";
        os << pre << "yield =";
        for (double p : m.yield) os << ' ' << format_double(p);
        os << "\n";
        os << pre << "scatter_keep_speed = " << format_double(m.scatter_keep_speed) << "\n";
        os << pre << "fission = " << (m.fission == FissionMode::Iid ? "iid" : "cluster") << "\n";
        if (m.fission == FissionMode::Cluster) os << pre << "cluster_spread = " << format_double(m.cluster_spread) << "\n";
    }
    return os.str();
}

// ---------------------------------------------------------------------------
// Parsing

NbpModel parse_nbp_model(std::string_view text) {
    using detail::parse_double;
    using detail::parse_double_list;
    using detail::parse_int;

    std::string name = "unnamed";
    std::string geometry_kind;
    double radius = -1.0, lower = 0.0, upper = 0.0;
    bool has_lower = false, has_upper = false;
    std::vector<double> interior;
    double v_min = -1.0, v_max = -1.0, kappa = 1.0;
    long long n_max = -1;
    bool saw_model = false;
    struct Pending {
        Material m;
        bool has_s = false, has_f = false, has_yield = false;
        int line = 0;
    };
    std::vector<Pending> regions;

    const auto number = [](std::string_view v, int line, std::string_view key) {
        double x = 0.0;
        if (!parse_double(v, x)) throw ParseError("'" + std::string(key) + "' must be a number", line);
        return x;
    };

    for (const auto& kv : detail::split_key_values(text)) {
        const int line = kv.line;
        if (kv.malformed) throw ParseError("expected 'key = value'", line);
        const std::string_view key = kv.key, value = kv.value;
        if (key == "model") {
            if (value != "nbp") throw ParseError("model must be 'nbp'", line);
            saw_model = true;
        } else if (key == "name") {
            name = std::string(value);
        } else if (key == "geometry") {
            if (value != "ball" && value != "box") throw ParseError("geometry must be 'ball' or 'box'", line);
            geometry_kind = std::string(value);
        } else if (key == "radius") {
            radius = number(value, line, key);
        } else if (key == "lower") {
            lower = number(value, line, key);
            has_lower = true;
        } else if (key == "upper") {
            upper = number(value, line, key);
            has_upper = true;
        } else if (key == "shells" || key == "planes") {
            if (!parse_double_list(value, interior)) throw ParseError("bad list for '" + std::string(key) + "'", line);
        } else if (key == "v_min") {
            v_min = number(value, line, key);
        } else if (key == "v_max") {
            v_max = number(value, line, key);
        } else if (key == "n_max") {
            if (!parse_int(value, n_max) || n_max < 1 || n_max > 64) throw ParseError("n_max must be in [1, 64]", line);
        } else if (key == "yield_multiplier") {
            kappa = number(value, line, key);
            if (!(kappa > 0.0)) throw ParseError("yield_multiplier must be positive", line);
        } else if (key.starts_with("region.")) {
            const auto rest = key.substr(7);
            const auto dot = rest.find('.');
            long long idx = 0;
            if (dot == std::string_view::npos || !parse_int(rest.substr(0, dot), idx) || idx < 1 || idx > 64)
                throw ParseError("bad region key '" + std::string(key) + "'", line);
            if (static_cast<std::size_t>(idx) > regions.size()) regions.resize(static_cast<std::size_t>(idx));
            Pending& r = regions[static_cast<std::size_t>(idx - 1)];
            if (r.line == 0) r.line = line;
            const auto field = rest.substr(dot + 1);
            if (field == "sigma_s") {
                r.m.sigma_s = number(value, line, key);
                r.has_s = true;
            } else if (field == "sigma_f") {
                r.m.sigma_f = number(value, line, key);
                r.has_f = true;
            } else if (field == "yield") {
                if (!parse_double_list(value, r.m.yield) || r.m.yield.empty())
                    throw ParseError("yield must list p_0 .. p_N", line);
                double total = 0.0;
                for (double p : r.m.yield) {
                    if (p < 0.0) throw ParseError("negative yield probability", line);
                    total += p;
                }
                if (std::abs(total - 1.0) > 1e-12) throw ParseError("yield probabilities must sum to 1", line);
                r.has_yield = true;
            } else if (field == "scatter_keep_speed") {
                r.m.scatter_keep_speed = number(value, line, key);
            } else if (field == "fission") {
                if (value == "iid") r.m.fission = FissionMode::Iid;
                else if (value == "cluster") r.m.fission = FissionMode::Cluster;
                else throw ParseError("fission must be 'iid' or 'cluster'", line);
            } else if (field == "cluster_spread") {
                r.m.cluster_spread = number(value, line, key);
            } else {
                throw ParseError("unknown region field '" + std::string(field) + "'", line);
            }
        } else {
            throw ParseError("unknown key '" + std::string(key) + "'", line);
        }
    }

    if (!saw_model) throw ParseError("missing 'model = nbp'", 0);
    if (geometry_kind.empty()) throw ParseError("missing 'geometry'", 0);
    if (v_min <= 0.0 || v_max < v_min) throw ParseError("need 0 < v_min <= v_max", 0);
    if (n_max < 1) throw ParseError("missing 'n_max'", 0);
    Geometry geometry;
    try {
        if (geometry_kind == "ball") {
            if (radius <= 0.0) throw ParseError("ball geometry needs a positive 'radius'", 0);
            geometry = Geometry::ball(radius, interior);
        } else {
            if (!has_lower || !has_upper) throw ParseError("box geometry needs 'lower' and 'upper'", 0);
            geometry = Geometry::box(lower, upper, interior);
        }
    } catch (const ModelError& e) {
        throw ParseError(e.what(), 0);
    }
    if (static_cast<int>(regions.size()) != geometry.region_count())
        throw ParseError("expected " + std::to_string(geometry.region_count()) + " regions, got " +
                             std::to_string(regions.size()),
                         0);
    std::vector<Material> materials;
    for (std::size_t i = 0; i < regions.size(); ++i) {
        const auto& r = regions[i];
        if (!r.has_s || !r.has_f || !r.has_yield)
            throw ParseError("region " + std::to_string(i + 1) + " needs sigma_s, sigma_f and yield", r.line);
        if (r.m.yield.size() > static_cast<std::size_t>(n_max) + 1)
            throw ParseError("region " + std::to_string(i + 1) + " yield exceeds n_max", r.line);
        materials.push_back(r.m);
    }
    try {
        NbpModel model(name, geometry, materials, v_min, v_max, static_cast<std::size_t>(n_max));
        return kappa == 1.0 ? model : model.with_yield_multiplier(kappa);
    } catch (const ModelError& e) {
        throw ParseError(e.what(), 0);
    }
}

// ---------------------------------------------------------------------------
// Bundled NBP models

namespace {

constexpr std::string_view kNbpBall = R"(# Homogeneous unit ball, close to critical as shipped.
# Rates are per unit time, speeds in radii per unit time. Scattering is frequent
# compared with leakage, which keeps weighted-walk estimates well conditioned.
model = nbp
name = nbp-ball
geometry = ball
radius = 1
v_min = 0.5
v_max = 2
n_max = 4
region.1.sigma_s = 10
region.1.sigma_f = 8
region.1.yield = 0.62 0.1 0.05 0.05 0.18
region.1.scatter_keep_speed = 0
region.1.fission = iid
)";

constexpr std::string_view kNbpBox = R"(# Two-region cube: multiplying slab for x < 0, pure scatterer for x > 0.
model = nbp
name = nbp-box
geometry = box
lower = -1
upper = 1
planes = 0
v_min = 0.5
v_max = 2
n_max = 4
region.1.sigma_s = 10
region.1.sigma_f = 8
region.1.yield = 0.62 0.1 0.05 0.05 0.18
region.1.fission = iid
region.2.sigma_s = 15
region.2.sigma_f = 0
region.2.yield = 1
region.2.scatter_keep_speed = 0.5
)";

}  // namespace

std::string_view bundled_nbp_text(std::string_view name) {
    if (name == "nbp-ball") return kNbpBall;
    if (name == "nbp-box") return kNbpBox;
    return {};
}

std::vector<std::string> bundled_nbp_names() { return {"nbp-ball", "nbp-box"}; }
NbpModel nbp_ball() { return parse_nbp_model(kNbpBall); }
NbpModel nbp_box() { return parse_nbp_model(kNbpBox); }

// ---------------------------------------------------------------------------
// Weighted neutron random walk

std::size_t nrw_walk(const NbpModel& model, const PhasePoint& x0, std::span<const double> times, RngStream& rng,
                     const std::function<void(std::size_t, const PhasePoint&, double)>& visit) {
    const Geometry& g = model.geometry();
    PhasePoint p = x0;
    int k = g.region_of(p.r);
    if (k < 0) throw SimulationError("nrw: start outside the domain");
    double s = 0.0, logw = 0.0;
    std::size_t ci = 0;
    while (ci < times.size()) {
        const double target = times[ci];
        if (target < s) throw RangeError("nrw: times must be increasing");
        const double a = model.alpha(k);
        const double b = model.beta(k);
        const double tau = rng.exponential(a);
        const auto cross = g.region_exit(p.r, p.v, k);
        const double remaining = target - s;
        const double dt = std::min({tau, cross.time, remaining});
        p.r += dt * p.v;
        logw += b * dt;
        s += dt;
        if (logw > 700.0) throw SimulationError("nrw: weight overflow (integral of beta above 700)");
        if (remaining <= tau && remaining < cross.time) {
            s = target;
            visit(ci, p, logw);
            ++ci;
        } else if (tau < cross.time) {
            const Material& m = model.material(k);
            if (rng.uniform() * a < m.sigma_s) p.v = model.sample_scatter_velocity(p.v, k, rng);
            else p.v = model.sample_fission_velocity(rng);
        } else {
            if (cross.next < 0) return ci;
            k = cross.next;
        }
    }
    return ci;
}

Estimate nrw_many_to_one(const NbpModel& model, const std::function<double(const PhasePoint&)>& f,
                         const PhasePoint& x0, double t, std::size_t n, std::uint64_t seed, const WorkerPool& pool) {
    if (n < 2) throw RangeError("nrw_many_to_one: need at least two walks");
    if (!(t >= 0.0)) throw RangeError("nrw_many_to_one: negative time");
    if (!model.is_valid(x0)) throw RangeError("nrw_many_to_one: start outside D x V");
    const double times[] = {t};
    std::vector<double> values(n, 0.0);
    pool.for_each_index(n, [&](std::size_t i) {
        RngStream rng(seed, i);
        nrw_walk(model, x0, times, rng,
                 [&](std::size_t, const PhasePoint& p, double logw) { values[i] = std::exp(logw) * f(p); });
    });
    return mean_estimate(values);
}

}  // namespace mbp
