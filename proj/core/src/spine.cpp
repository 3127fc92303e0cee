#include "mbp/spine.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "mbp/linalg.hpp"

namespace mbp {

namespace {

constexpr double kCriticalTol = 1e-10;
// A thinned spine that rejects this many proposals in a row has an acceptance
// rate far below 1e-4, which only happens with a badly estimated phi.
constexpr std::size_t kStallProposals = 100'000;

std::size_t pick_cumulative(const std::vector<double>& cdf, double u) {
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u * cdf.back());
    return std::min(static_cast<std::size_t>(it - cdf.begin()), cdf.size() - 1);
}

}  // namespace

// ---------------------------------------------------------------------------
// Finite-type spine

FiniteSpineKernel::FiniteSpineKernel(const FiniteTypeModel& model, const EigenTriple& eigen) : model_(&model) {
    const int d = model.types();
    if (eigen.phi.size() != d) throw ModelError("spine: eigen triple does not match the model");
    if (std::abs(eigen.lambda) > kCriticalTol)
        throw ModelError("spine: model is not critical (lambda = " + std::to_string(eigen.lambda) + ")");
    phi_.assign(eigen.phi.data(), eigen.phi.data() + d);
    for (double p : phi_)
        if (!(p > 0.0)) throw ModelError("spine: phi must be strictly positive");

    const Eigen::VectorXd mphi = offspring_mean(model, eigen.phi);
    const Eigen::VectorXd aphi = model.generator() * eigen.phi;
    for (int i = 0; i < d; ++i) {
        const auto ui = static_cast<std::size_t>(i);
        rho_.push_back(model.rate(i) * mphi[i] / phi_[ui]);
        // Row sums of Q = diag(phi)^-1 A diag(phi) - lambda I vanish iff A phi = lambda phi.
        conservativity_ = std::max(conservativity_, std::abs(aphi[i] / phi_[ui] - eigen.lambda));

        std::vector<double> w, cdf;
        double acc = 0.0;
        for (const auto& o : model.outcomes(i)) {
            double mass = 0.0;
            for (int j : o.members) mass += phi_[static_cast<std::size_t>(j)];
            w.push_back(o.probability * mass / mphi[i]);
            acc += o.probability * mass;
            cdf.push_back(acc);
        }
        if (!(acc > 0.0)) throw ModelError("spine: type " + std::to_string(i + 1) + " has m[phi] = 0");
        biased_.push_back(std::move(w));
        biased_cdf_.push_back(std::move(cdf));
    }
    if (conservativity_ > kCriticalTol)
        throw ModelError("spine: phi-transformed generator is not conservative (residual " +
                         std::to_string(conservativity_) + ")");
}

std::size_t FiniteSpineKernel::sample_size_biased(int i, RngStream& rng) const {
    return pick_cumulative(biased_cdf_[static_cast<std::size_t>(i)], rng.uniform());
}

SpineStep<int> FiniteSpineKernel::advance(int state, double max_dt, RngStream& rng, std::vector<int>& kids) const {
    kids.clear();
    const double tau = rng.exponential(rho(state));
    if (tau >= max_dt) return {state, max_dt, false};
    const auto& members = model_->outcomes(state)[sample_size_biased(state, rng)].members;
    double mass = 0.0;
    for (int j : members) mass += phi(j);
    double u = rng.uniform() * mass;
    std::size_t chosen = members.size() - 1;
    for (std::size_t k = 0; k < members.size(); ++k) {
        u -= phi(members[k]);
        if (u < 0.0) {
            chosen = k;
            break;
        }
    }
    for (std::size_t k = 0; k < members.size(); ++k)
        if (k != chosen) kids.push_back(members[k]);
    return {members[chosen], tau, true};
}

// ---------------------------------------------------------------------------
// NBP spine

NbpSpineKernel::NbpSpineKernel(const NbpModel& model, const EigenTriple& eigen, double lambda_tol)
    : model_(&model), eigen_(&eigen) {
    if (!eigen.grid) throw ModelError("spine: NBP eigen triple has no phase grid");
    if (eigen.phi.size() != eigen.grid->cells()) throw ModelError("spine: phi does not match the phase grid");
    if (std::abs(eigen.lambda) > lambda_tol)
        throw ModelError("spine: model is not critical (lambda_hat = " + std::to_string(eigen.lambda) + ")");
    const double lo = eigen.phi.minCoeff(), hi = eigen.phi.maxCoeff();
    if (!(lo > 0.0)) throw ModelError("spine: phi estimate must be strictly positive on every cell");
    const double ratio = hi / lo;
    double smax = 0.0, fmax = 0.0;
    for (const auto& m : model.materials()) {
        smax = std::max(smax, m.sigma_s);
        fmax = std::max(fmax, m.sigma_f);
    }
    envelope_s_ = smax * ratio;
    envelope_f_ = fmax * static_cast<double>(model.n_max()) * ratio;
    if (!(envelope_f_ > 0.0)) throw ModelError("spine: model has no fission");
}

namespace {

/// Specular reflection at the outer boundary; also pulls r back onto the boundary.
void reflect(const Geometry& g, PhasePoint& p) {
    if (g.kind() == Geometry::Kind::Ball) {
        const double norm = p.r.norm();
        const Vec3 n = p.r / norm;
        if (norm > g.radius()) p.r = g.radius() * n;
        p.v -= 2.0 * p.v.dot(n) * n;
        return;
    }
    const double tol = 1e-12 * std::max(1.0, g.hi() - g.lo());
    for (int a = 0; a < 3; ++a) {
        if (p.r[a] >= g.hi() - tol && p.v[a] > 0.0) {
            p.r[a] = std::min(p.r[a], g.hi());
            p.v[a] = -p.v[a];
        } else if (p.r[a] <= g.lo() + tol && p.v[a] < 0.0) {
            p.r[a] = std::max(p.r[a], g.lo());
            p.v[a] = -p.v[a];
        }
    }
}

}  // namespace

SpineStep<PhasePoint> NbpSpineKernel::advance(const PhasePoint& x, double max_dt, RngStream& rng,
                                              std::vector<PhasePoint>& kids) const {
    const Geometry& g = model_->geometry();
    const double total = envelope_s_ + envelope_f_;
    PhasePoint p = x;
    double elapsed = 0.0;
    std::size_t rejected = 0;
    int idle_reflections = 0;
    for (;;) {
        const double tau = rng.exponential(total);
        const double remaining = max_dt - elapsed;
        const double exit = g.exit_time(p.r, p.v);
        if (exit <= tau && exit < remaining) {
            p.r += exit * p.v;
            elapsed += exit;
            reflect(g, p);
            // A ray started on the boundary can report a zero chord; a few in a row
            // means reflect() failed to turn the velocity inward.
            idle_reflections = exit > 0.0 ? 0 : idle_reflections + 1;
            if (idle_reflections > 8) throw SimulationError("spine: reflection made no progress");
            continue;
        }
        if (tau >= remaining) {
            p.r += remaining * p.v;
            return {p, max_dt, false};
        }
        p.r += tau * p.v;
        elapsed += tau;
        const int k = g.region_of(p.r);
        if (k < 0) {
            // Rounding put the point a hair outside; treat as a rejected proposal.
            reflect(g, p);
            continue;
        }
        const Material& m = model_->material(k);
        const double phi_here = phi(p);
        if (rng.uniform() * total < envelope_s_) {
            const Vec3 v2 = model_->sample_scatter_velocity(p.v, k, rng);
            const double accept = m.sigma_s * phi({p.r, v2}) / (envelope_s_ * phi_here);
            if (rng.uniform() < accept) {
                p.v = v2;
                rejected = 0;
            } else if (++rejected > kStallProposals) {
                throw SimulationError("spine: rejection sampler stalled (acceptance below 1e-4)");
            }
            continue;
        }
        model_->sample_offspring(p, rng, kids);
        double mass = 0.0;
        for (const auto& c : kids) mass += phi(c);
        const double accept = m.sigma_f * mass / (envelope_f_ * phi_here);
        if (!(rng.uniform() < accept)) {
            if (++rejected > kStallProposals)
                throw SimulationError("spine: rejection sampler stalled (acceptance below 1e-4)");
            continue;
        }
        double u = rng.uniform() * mass;
        std::size_t chosen = kids.size() - 1;
        for (std::size_t j = 0; j < kids.size(); ++j) {
            u -= phi(kids[j]);
            if (u < 0.0) {
                chosen = j;
                break;
            }
        }
        PhasePoint spine = kids[chosen];
        kids.erase(kids.begin() + static_cast<std::ptrdiff_t>(chosen));
        return {spine, elapsed, true};
    }
}

FiniteSpineKernel make_spine_kernel(const FiniteTypeModel& model, const EigenTriple& eigen) {
    return FiniteSpineKernel(model, eigen);
}

NbpSpineKernel make_spine_kernel(const NbpModel& model, const EigenTriple& eigen) { return NbpSpineKernel(model, eigen); }

// ---------------------------------------------------------------------------
// Fission time along the spine

double SpinePath::integral() const {
    double sum = 0.0;
    for (std::size_t k = 0; k < starts.size(); ++k) {
        const double end = k + 1 < starts.size() ? starts[k + 1] : t_end;
        sum += rho[k] * (end - starts[k]);
    }
    return sum;
}

double sample_fission_time(const SpinePath& path, RngStream& rng) {
    if (path.starts.empty() || path.starts.size() != path.rho.size())
        throw RangeError("sample_fission_time: malformed path");
    const double mass = path.integral();
    if (!(mass > 0.0)) throw RangeError("sample_fission_time: path has zero rho mass");
    double target = rng.uniform() * mass;
    for (std::size_t k = 0; k < path.starts.size(); ++k) {
        const double end = k + 1 < path.starts.size() ? path.starts[k + 1] : path.t_end;
        const double piece = path.rho[k] * (end - path.starts[k]);
        if (target < piece) return path.starts[k] + target / path.rho[k];
        target -= piece;
    }
    return path.t_end;
}

// ---------------------------------------------------------------------------
// Ergodic averages

namespace {

constexpr std::array<double, 5> kGaussNodes = {-0.9061798459386640, -0.5384693101056831, 0.0, 0.5384693101056831,
                                               0.9061798459386640};
constexpr std::array<double, 5> kGaussWeights = {0.2369268850561891, 0.4786286704993665, 0.5688888888888889,
                                                 0.4786286704993665, 0.2369268850561891};

double segment_integral(const ErgodicFactor& f, int state, double a, double b) {
    const double half = 0.5 * (b - a), mid = 0.5 * (a + b);
    double sum = 0.0;
    for (std::size_t q = 0; q < kGaussNodes.size(); ++q) sum += kGaussWeights[q] * f(state, mid + half * kGaussNodes[q]);
    return half * sum;
}

}  // namespace

ErgodicResult ergodic_average_check(const FiniteSpineKernel& kernel, const EigenTriple& eigen,
                                    const std::vector<ErgodicFactor>& factors, int x0, double t, std::size_t n,
                                    std::uint64_t seed, const WorkerPool& pool) {
    if (factors.empty()) throw RangeError("ergodic_average_check: no factors");
    if (!(t > 0.0)) throw RangeError("ergodic_average_check: t must be positive");
    if (n < 2) throw RangeError("ergodic_average_check: need at least two paths");
    if (!kernel.model().is_valid(x0)) throw RangeError("ergodic_average_check: initial type out of range");
    const int d = kernel.model().types();

    std::vector<double> samples(n);
    pool.for_each_index(n, [&](std::size_t i) {
        thread_local std::vector<int> kids;
        thread_local std::vector<double> integrals;
        RngStream rng(seed, i);
        integrals.assign(factors.size(), 0.0);
        int y = x0;
        double s = 0.0;
        while (s < t) {
            const auto step = kernel.advance(y, t - s, rng, kids);
            const double end = step.branched ? std::min(s + step.elapsed, t) : t;
            for (std::size_t f = 0; f < factors.size(); ++f)
                integrals[f] += segment_integral(factors[f], y, s / t, end / t);
            s = end;
            y = step.state;
        }
        double prod = 1.0;
        for (double v : integrals) prod *= v;
        samples[i] = prod;
    });

    ErgodicResult out;
    out.estimate = mean_estimate(samples);
    out.target = 1.0;
    for (const auto& f : factors) {
        const auto weighted = [&](double u) {
            double sum = 0.0;
            for (int j = 0; j < d; ++j) sum += eigen.phi[j] * eigen.phi_tilde[j] * f(j, u);
            return sum;
        };
        out.target *= adaptive_simpson(std::function<double(double)>(weighted), 0.0, 1.0, 1e-10);
    }
    return out;
}

}  // namespace mbp
