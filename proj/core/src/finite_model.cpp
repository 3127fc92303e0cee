#include "mbp/finite_model.hpp"

#include <boost/multiprecision/cpp_int.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include "mbp/eigen.hpp"
#include "mbp/error.hpp"
#include "mbp/linalg.hpp"
#include "text_util.hpp"

namespace mbp {

using detail::format_double;
using detail::parse_double;
using detail::parse_int;
using detail::trim;

namespace {

using Rational = boost::multiprecision::cpp_rational;

std::vector<int> expand(const std::vector<int>& counts) {
    std::vector<int> members;
    for (std::size_t j = 0; j < counts.size(); ++j)
        for (int c = 0; c < counts[j]; ++c) members.push_back(static_cast<int>(j));
    return members;
}

}  // namespace

FiniteTypeModel::FiniteTypeModel(std::string name, std::vector<double> rates,
                                 std::vector<std::vector<OffspringOutcome>> table)
    : name_(std::move(name)), rates_(std::move(rates)), table_(std::move(table)) {
    const std::size_t d = rates_.size();
    if (d == 0) throw ModelError("finite model: at least one type required");
    if (d > 64) throw ModelError("finite model: at most 64 types supported");
    if (table_.size() != d) throw ModelError("finite model: offspring table size differs from number of types");
    cumulative_.resize(d);
    m_scalar_.assign(d, 0.0);
    for (std::size_t i = 0; i < d; ++i) {
        if (!(rates_[i] > 0.0) || !std::isfinite(rates_[i]))
            throw ModelError("finite model: rate of type " + std::to_string(i + 1) + " must be positive and finite");
        if (table_[i].empty()) throw ModelError("finite model: type " + std::to_string(i + 1) + " has no outcomes");
        double total = 0.0;
        for (auto& o : table_[i]) {
            if (!(o.probability >= 0.0) || o.probability > 1.0)
                throw ModelError("finite model: probability outside [0, 1] for type " + std::to_string(i + 1));
            if (o.counts.size() != d) throw ModelError("finite model: offspring count vector has wrong length");
            for (int c : o.counts)
                if (c < 0) throw ModelError("finite model: negative offspring count");
            o.members = expand(o.counts);
            total += o.probability;
            cumulative_[i].push_back(total);
            m_scalar_[i] += o.probability * static_cast<double>(o.members.size());
            n_max_ = std::max(n_max_, o.members.size());
        }
        if (std::abs(total - 1.0) > 1e-12)
            throw ModelError("finite model: probabilities of type " + std::to_string(i + 1) + " sum to " +
                             format_double(total));
        cumulative_[i].back() = 1.0;
    }
}

Flight<int> FiniteTypeModel::sample_flight(int state, double max_dt, RngStream& rng) const {
    const double tau = rng.exponential(rates_[static_cast<std::size_t>(state)]);
    if (tau >= max_dt) return {state, max_dt, FlightEnd::Horizon};
    return {state, tau, FlightEnd::Branch};
}

void FiniteTypeModel::sample_offspring(int state, RngStream& rng, std::vector<int>& out) const {
    const auto& cum = cumulative_[static_cast<std::size_t>(state)];
    const double u = rng.uniform();
    std::size_t k = 0;
    while (k + 1 < cum.size() && u >= cum[k]) ++k;
    const auto& m = table_[static_cast<std::size_t>(state)][k].members;
    out.assign(m.begin(), m.end());
}

Eigen::MatrixXd FiniteTypeModel::mean_matrix() const {
    const int d = types();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(d, d);
    for (int i = 0; i < d; ++i)
        for (const auto& o : table_[static_cast<std::size_t>(i)])
            for (int j = 0; j < d; ++j) m(i, j) += o.probability * o.counts[static_cast<std::size_t>(j)];
    return m;
}

Eigen::MatrixXd FiniteTypeModel::generator() const {
    const int d = types();
    Eigen::MatrixXd a = mean_matrix() - Eigen::MatrixXd::Identity(d, d);
    for (int i = 0; i < d; ++i) a.row(i) *= rates_[static_cast<std::size_t>(i)];
    return a;
}

FiniteTypeModel FiniteTypeModel::with_yield_multiplier(double kappa) const {
    if (!(kappa > 0.0) || !std::isfinite(kappa)) throw RangeError("yield multiplier must be positive and finite");
    const int base = static_cast<int>(std::floor(kappa));
    const double q = kappa - base;
    const std::size_t d = rates_.size();

    std::vector<std::vector<OffspringOutcome>> table(d);
    for (std::size_t i = 0; i < d; ++i) {
        std::map<std::vector<int>, double> merged;
        for (const auto& o : table_[i]) {
            // Enumerate the number b_j of type-j children that receive the extra copy.
            std::vector<int> b(d, 0);
            for (;;) {
                double p = o.probability;
                std::vector<int> counts(d);
                for (std::size_t j = 0; j < d; ++j) {
                    const int c = o.counts[j];
                    const double binom = std::exp(std::lgamma(c + 1.0) - std::lgamma(b[j] + 1.0) -
                                                  std::lgamma(c - b[j] + 1.0));
                    p *= binom * std::pow(q, b[j]) * std::pow(1.0 - q, c - b[j]);
                    counts[j] = base * c + b[j];
                }
                if (p > 0.0) merged[counts] += p;
                std::size_t pos = 0;
                while (pos < d && ++b[pos] > o.counts[pos]) b[pos++] = 0;
                if (pos == d) break;
            }
        }
        double total = 0.0;
        for (const auto& [counts, p] : merged) total += p;
        for (const auto& [counts, p] : merged) table[i].push_back({p / total, counts, {}});
    }
    FiniteTypeModel out(name_, rates_, std::move(table));
    out.yield_multiplier_ = yield_multiplier_ * kappa;
    return out;
}

std::string FiniteTypeModel::to_text() const {
    std::ostringstream os;
    os << "model = finite\n";
    os << "name = " << name_ << "\n";
    os << "types = " << types() << "\n";
    for (int i = 0; i < types(); ++i) os << "rate." << i + 1 << " = " << format_double(rate(i)) << "\n";
    for (int i = 0; i < types(); ++i)
        for (const auto& o : outcomes(i)) {
            os << "offspring." << i + 1 << " = " << format_double(o.probability) << " :";
            bool any = false;
            for (int c : o.counts) any = any || c > 0;
            if (any)
                for (int c : o.counts) os << ' ' << c;
            os << "\n";
        }
    return os.str();
}

// ---------------------------------------------------------------------------
// Parsing

namespace {

struct Probability {
    double value;
    std::optional<Rational> exact;
};

Probability parse_probability(std::string_view s, int line) {
    s = trim(s);
    if (const auto slash = s.find('/'); slash != std::string_view::npos) {
        long long p = 0, q = 0;
        if (!parse_int(s.substr(0, slash), p) || !parse_int(s.substr(slash + 1), q) || q <= 0 || p < 0)
            throw ParseError("bad rational probability '" + std::string(s) + "'", line);
        return {static_cast<double>(p) / static_cast<double>(q), Rational(p, q)};
    }
    double v = 0.0;
    if (!parse_double(s, v)) throw ParseError("bad probability '" + std::string(s) + "'", line);
    return {v, std::nullopt};
}

int parse_type_suffix(std::string_view key, std::string_view prefix, int types, int line) {
    long long t = 0;
    if (!parse_int(key.substr(prefix.size()), t)) throw ParseError("bad type index in '" + std::string(key) + "'", line);
    if (types <= 0) throw ParseError("'types' must be declared before '" + std::string(key) + "'", line);
    if (t < 1 || t > types) throw ParseError("type index out of range in '" + std::string(key) + "'", line);
    return static_cast<int>(t - 1);
}

}  // namespace

FiniteTypeModel parse_finite_model(std::string_view text) {
    std::string name = "unnamed";
    int types = 0;
    bool saw_model = false;
    std::vector<double> rates;
    std::vector<int> rate_line;
    std::vector<std::vector<OffspringOutcome>> table;
    std::vector<std::vector<Probability>> probs;
    std::vector<int> first_line;

    for (const auto& kv : detail::split_key_values(text)) {
        const int line_no = kv.line;
        if (kv.malformed) throw ParseError("expected 'key = value'", line_no);
        const std::string_view key = kv.key;
        const std::string_view value = kv.value;

        if (key == "model") {
            if (value != "finite") throw ParseError("model must be 'finite', got '" + std::string(value) + "'", line_no);
            saw_model = true;
        } else if (key == "name") {
            if (value.empty()) throw ParseError("empty name", line_no);
            name = std::string(value);
        } else if (key == "types") {
            long long t = 0;
            if (types != 0) throw ParseError("'types' declared twice", line_no);
            if (!parse_int(value, t) || t < 1 || t > 64) throw ParseError("types must be an integer in [1, 64]", line_no);
            types = static_cast<int>(t);
            rates.assign(static_cast<std::size_t>(types), -1.0);
            rate_line.assign(static_cast<std::size_t>(types), 0);
            table.assign(static_cast<std::size_t>(types), {});
            probs.assign(static_cast<std::size_t>(types), {});
            first_line.assign(static_cast<std::size_t>(types), 0);
        } else if (key.starts_with("rate.")) {
            const int i = parse_type_suffix(key, "rate.", types, line_no);
            double r = 0.0;
            if (!parse_double(value, r) || !(r > 0.0)) throw ParseError("rate must be a positive number", line_no);
            if (rate_line[static_cast<std::size_t>(i)] != 0) throw ParseError("rate declared twice", line_no);
            rates[static_cast<std::size_t>(i)] = r;
            rate_line[static_cast<std::size_t>(i)] = line_no;
        } else if (key.starts_with("offspring.")) {
            const int i = parse_type_suffix(key, "offspring.", types, line_no);
            const auto colon = value.find(':');
            if (colon == std::string_view::npos) throw ParseError("offspring line needs 'probability : counts'", line_no);
            const Probability p = parse_probability(value.substr(0, colon), line_no);
            if (p.value < 0.0 || p.value > 1.0) throw ParseError("probability outside [0, 1]", line_no);
            std::vector<int> counts(static_cast<std::size_t>(types), 0);
            std::istringstream is{std::string(trim(value.substr(colon + 1)))};
            std::string tok;
            int n = 0;
            while (is >> tok) {
                long long c = 0;
                if (!parse_int(tok, c) || c < 0 || c > 1000) throw ParseError("bad offspring count '" + tok + "'", line_no);
                if (n >= types) throw ParseError("too many offspring counts (expected " + std::to_string(types) + ")", line_no);
                counts[static_cast<std::size_t>(n++)] = static_cast<int>(c);
            }
            if (n != 0 && n != types)
                throw ParseError("expected " + std::to_string(types) + " offspring counts, got " + std::to_string(n), line_no);
            auto& row = table[static_cast<std::size_t>(i)];
            if (row.empty()) first_line[static_cast<std::size_t>(i)] = line_no;
            row.push_back({p.value, counts, {}});
            probs[static_cast<std::size_t>(i)].push_back(p);
        } else {
            throw ParseError("unknown key '" + std::string(key) + "'", line_no);
        }
    }

    if (!saw_model) throw ParseError("missing 'model = finite'", 0);
    if (types == 0) throw ParseError("missing 'types'", 0);
    for (int i = 0; i < types; ++i) {
        const auto si = static_cast<std::size_t>(i);
        if (rate_line[si] == 0) throw ParseError("missing rate." + std::to_string(i + 1), 0);
        if (table[si].empty()) throw ParseError("missing offspring." + std::to_string(i + 1), 0);
        const bool all_exact = std::all_of(probs[si].begin(), probs[si].end(), [](const Probability& p) { return p.exact.has_value(); });
        if (all_exact) {
            Rational sum = 0;
            for (const auto& p : probs[si]) sum += *p.exact;
            if (sum != 1)
                throw ParseError("probabilities of type " + std::to_string(i + 1) + " sum to " + sum.str() + ", not 1",
                                 first_line[si]);
        } else {
            double sum = 0.0;
            for (const auto& p : probs[si]) sum += p.value;
            if (std::abs(sum - 1.0) > 1e-12)
                throw ParseError("probabilities of type " + std::to_string(i + 1) + " sum to " + format_double(sum) +
                                     ", not 1",
                                 first_line[si]);
        }
    }
    try {
        return FiniteTypeModel(name, rates, table);
    } catch (const ModelError& e) {
        throw ParseError(e.what(), 0);
    }
}

// ---------------------------------------------------------------------------
// Bundled models

namespace {

constexpr std::string_view kModelBin = R"(# Critical binary splitting: one type, rate 1, zero or two children.
model = finite
name = model-bin
types = 1
rate.1 = 1
offspring.1 = 1/2 :
offspring.1 = 1/2 : 2
)";

constexpr std::string_view kModel2t = R"(# Two types with non-local offspring; critical with phi = (1, 1).
model = finite
name = model-2t
types = 2
rate.1 = 1
rate.2 = 2
offspring.1 = 1/2 :
offspring.1 = 1/2 : 1 1
offspring.2 = 1/2 :
offspring.2 = 1/2 : 2 0
)";

constexpr std::string_view kModel3t = R"(# Three types, up to four children; critical with phi = (1, 1, 1).
model = finite
name = model-3t
types = 3
rate.1 = 1
rate.2 = 1.5
rate.3 = 0.5
offspring.1 = 3/4 :
offspring.1 = 1/4 : 2 1 1
offspring.2 = 1/2 :
offspring.2 = 1/2 : 0 1 1
offspring.3 = 2/3 :
offspring.3 = 1/3 : 1 1 1
)";

}  // namespace

std::string_view bundled_model_text(std::string_view name) {
    if (name == "model-bin") return kModelBin;
    if (name == "model-2t") return kModel2t;
    if (name == "model-3t") return kModel3t;
    return {};
}

std::vector<std::string> bundled_model_names() { return {"model-bin", "model-2t", "model-3t"}; }

FiniteTypeModel model_bin() { return parse_finite_model(kModelBin); }
FiniteTypeModel model_2t() { return parse_finite_model(kModel2t); }
FiniteTypeModel model_3t() { return parse_finite_model(kModel3t); }

// ---------------------------------------------------------------------------
// Exact functionals

Eigen::VectorXd mean_semigroup(const FiniteTypeModel& model, double t, const Eigen::VectorXd& f) {
    if (t < 0.0) throw RangeError("mean_semigroup: negative time");
    if (f.size() != model.types()) throw RangeError("mean_semigroup: f has wrong length");
    if (t == 0.0) return f;
    return expm(t * model.generator()) * f;
}

double variance_functional(const FiniteTypeModel& model, int i, const Eigen::VectorXd& f, const Eigen::VectorXd& g) {
    if (f.size() != model.types() || g.size() != model.types()) throw RangeError("variance_functional: bad length");
    double total = 0.0;
    for (const auto& o : model.outcomes(i)) {
        double sf = 0.0, sg = 0.0, sfg = 0.0;
        for (int x : o.members) {
            sf += f[x];
            sg += g[x];
            sfg += f[x] * g[x];
        }
        total += o.probability * (sf * sg - sfg);
    }
    return total;
}

Eigen::VectorXd variance_functional(const FiniteTypeModel& model, const Eigen::VectorXd& f, const Eigen::VectorXd& g) {
    Eigen::VectorXd v(model.types());
    for (int i = 0; i < model.types(); ++i) v[i] = variance_functional(model, i, f, g);
    return v;
}

Eigen::VectorXd offspring_mean(const FiniteTypeModel& model, const Eigen::VectorXd& f) {
    return model.mean_matrix() * f;
}

Eigen::VectorXd nonlinear_branching_term(const FiniteTypeModel& model, const Eigen::VectorXd& h) {
    if (h.size() != model.types()) throw RangeError("nonlinear_branching_term: bad length");
    Eigen::VectorXd out(model.types());
    for (int i = 0; i < model.types(); ++i) {
        double e = 0.0;
        for (const auto& o : model.outcomes(i)) {
            double prod = 1.0, sum = 0.0;
            for (int x : o.members) {
                prod *= 1.0 - h[x];
                sum += h[x];
            }
            e += o.probability * (1.0 - prod - sum);
        }
        out[i] = model.rate(i) * e;
    }
    return out;
}

Eigen::VectorXd many_to_two_exact(const FiniteTypeModel& model, const Eigen::VectorXd& f, const Eigen::VectorXd& g,
                                  double t, double rel_tol) {
    if (t < 0.0) throw RangeError("many_to_two_exact: negative time");
    if (f.size() != model.types() || g.size() != model.types()) throw RangeError("many_to_two_exact: bad length");
    const Eigen::VectorXd fg = f.cwiseProduct(g);
    if (t == 0.0) return fg;
    const Eigen::MatrixXd a = model.generator();
    const Eigen::VectorXd gamma = Eigen::Map<const Eigen::VectorXd>(model.rates().data(), model.types());
    const auto integrand = [&](double s) -> Eigen::VectorXd {
        const Eigen::MatrixXd rest = expm((t - s) * a);
        const Eigen::VectorXd pf = rest * f, pg = rest * g;
        const Eigen::VectorXd inner = gamma.cwiseProduct(variance_functional(model, pf, pg));
        return expm(s * a) * inner;
    };
    return expm(t * a) * fg + adaptive_simpson(integrand, 0.0, t, rel_tol);
}

// ---------------------------------------------------------------------------
// Survival ODE

std::size_t SurvivalOde::index_of(double t) const {
    if (times.empty()) throw RangeError("SurvivalOde: empty trajectory");
    const double k = std::round(t / dt);
    if (k < 0 || k >= static_cast<double>(times.size())) throw RangeError("SurvivalOde: time outside integrated range");
    return static_cast<std::size_t>(k);
}

double default_ode_step(const FiniteTypeModel& model) {
    const double gmax = *std::max_element(model.rates().begin(), model.rates().end());
    return 0.005 / gmax;
}

SurvivalOde nonlinear_ode(const FiniteTypeModel& model, double t_max, double dt, const EigenTriple* eigen) {
    if (!(t_max >= 0.0)) throw RangeError("nonlinear_ode: t_max must be nonnegative");
    const double gmax = *std::max_element(model.rates().begin(), model.rates().end());
    if (!(dt > 0.0) || dt > 0.01 / gmax * (1.0 + 1e-12))
        throw RangeError("nonlinear_ode: dt must be in (0, 0.01 / max gamma]");
    const int d = model.types();
    if (eigen != nullptr && eigen->phi_tilde.size() != d) throw RangeError("nonlinear_ode: eigen triple size mismatch");

    // du/dt = gamma (E[1 - prod(1 - u)] - u) = gamma (m[u] - u) + G[u].
    const auto rhs = [&](const Eigen::VectorXd& u) {
        Eigen::VectorXd out(d);
        for (int i = 0; i < d; ++i) {
            double e = 0.0;
            for (const auto& o : model.outcomes(i)) {
                double prod = 1.0;
                for (int x : o.members) prod *= 1.0 - u[x];
                e += o.probability * (1.0 - prod);
            }
            out[i] = model.rate(i) * (e - u[i]);
        }
        return out;
    };

    const auto steps = static_cast<std::size_t>(std::llround(std::ceil(t_max / dt - 1e-9)));
    SurvivalOde ode;
    ode.dt = dt;
    ode.times.reserve(steps + 1);
    ode.u.reserve(steps + 1);
    Eigen::VectorXd u = Eigen::VectorXd::Ones(d);
    ode.times.push_back(0.0);
    ode.u.push_back(u);
    for (std::size_t s = 1; s <= steps; ++s) {
        const Eigen::VectorXd k1 = rhs(u);
        const Eigen::VectorXd k2 = rhs(u + 0.5 * dt * k1);
        const Eigen::VectorXd k3 = rhs(u + 0.5 * dt * k2);
        const Eigen::VectorXd k4 = rhs(u + dt * k3);
        const Eigen::VectorXd next = u + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        for (int i = 0; i < d; ++i) {
            if (!(next[i] >= 0.0 && next[i] <= 1.0))
                throw ConvergenceError("nonlinear_ode: solution left [0, 1]; reduce dt");
            if (next[i] > u[i] + 1e-15) throw ConvergenceError("nonlinear_ode: monotonicity violated; reduce dt");
        }
        u = next;
        ode.times.push_back(static_cast<double>(s) * dt);
        ode.u.push_back(u);
    }
    if (eigen != nullptr) {
        ode.a.reserve(ode.u.size());
        for (const auto& v : ode.u) ode.a.push_back(eigen->phi_tilde.dot(v));
    }
    return ode;
}

}  // namespace mbp
