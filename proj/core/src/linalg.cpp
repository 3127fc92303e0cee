#include "mbp/linalg.hpp"

#include <cmath>

#include "mbp/error.hpp"

namespace mbp {

Eigen::MatrixXd expm(const Eigen::MatrixXd& a) {
    if (a.rows() != a.cols()) throw RangeError("expm: matrix must be square");
    const Eigen::Index n = a.rows();
    if (n == 0) return a;

    // Higham (2005), "The scaling and squaring method for the matrix exponential revisited".
    static constexpr double b[] = {64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                                   1187353796428800.0,  129060195264000.0,   10559470521600.0,
                                   670442572800.0,      33522128640.0,       1323241920.0,
                                   40840800.0,          960960.0,            16380.0,
                                   182.0,               1.0};
    constexpr double theta13 = 5.371920351148152;

    const double norm1 = a.cwiseAbs().colwise().sum().maxCoeff();
    int s = 0;
    if (norm1 > theta13) s = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / theta13))));
    const Eigen::MatrixXd x = a / std::ldexp(1.0, s);

    const Eigen::MatrixXd id = Eigen::MatrixXd::Identity(n, n);
    const Eigen::MatrixXd x2 = x * x;
    const Eigen::MatrixXd x4 = x2 * x2;
    const Eigen::MatrixXd x6 = x4 * x2;
    const Eigen::MatrixXd u =
        x * (x6 * (b[13] * x6 + b[11] * x4 + b[9] * x2) + b[7] * x6 + b[5] * x4 + b[3] * x2 + b[1] * id);
    const Eigen::MatrixXd v = x6 * (b[12] * x6 + b[10] * x4 + b[8] * x2) + b[6] * x6 + b[4] * x4 + b[2] * x2 + b[0] * id;
    Eigen::MatrixXd r = (v - u).partialPivLu().solve(v + u);
    for (int i = 0; i < s; ++i) r = r * r;
    return r;
}

namespace {

struct Panel {
    double a, m, b;
    Eigen::VectorXd fa, fm, fb, whole;
};

Eigen::VectorXd simpson_rec(const std::function<Eigen::VectorXd(double)>& f, const Panel& p, double rel_tol,
                            const Eigen::VectorXd& scale, double total, int depth, int max_depth) {
    const double lm = 0.5 * (p.a + p.m), rm = 0.5 * (p.m + p.b);
    const Eigen::VectorXd flm = f(lm), frm = f(rm);
    const double h = p.b - p.a;
    const Eigen::VectorXd left = (h / 12.0) * (p.fa + 4.0 * flm + p.fm);
    const Eigen::VectorXd right = (h / 12.0) * (p.fm + 4.0 * frm + p.fb);
    const Eigen::VectorXd both = left + right;
    const Eigen::VectorXd diff = both - p.whole;
    // Error budget is shared among panels in proportion to their width.
    const double budget = 15.0 * rel_tol * (std::abs(h) / total);
    bool ok = true;
    for (Eigen::Index i = 0; i < diff.size(); ++i)
        if (std::abs(diff[i]) > budget * scale[i]) ok = false;
    if (ok) return both + diff / 15.0;
    if (depth >= max_depth) throw ConvergenceError("adaptive_simpson: depth limit reached");
    return simpson_rec(f, {p.a, lm, p.m, p.fa, flm, p.fm, left}, rel_tol, scale, total, depth + 1, max_depth) +
           simpson_rec(f, {p.m, rm, p.b, p.fm, frm, p.fb, right}, rel_tol, scale, total, depth + 1, max_depth);
}

}  // namespace

Eigen::VectorXd adaptive_simpson(const std::function<Eigen::VectorXd(double)>& f, double a, double b,
                                 double rel_tol, int max_depth) {
    const Eigen::VectorXd fa = f(a);
    if (a == b) return Eigen::VectorXd::Zero(fa.size());
    const double m = 0.5 * (a + b);
    const Eigen::VectorXd fm = f(m), fb = f(b);
    const Eigen::VectorXd whole = ((b - a) / 6.0) * (fa + 4.0 * fm + fb);

    // Tolerance is relative to a coarse estimate of the integral's magnitude,
    // taken from a 33-point trapezoid pass, so flat regions do not force
    // needless refinement.
    Eigen::VectorXd coarse = Eigen::VectorXd::Zero(fa.size());
    constexpr int kProbe = 32;
    for (int i = 0; i <= kProbe; ++i) {
        const double w = (i == 0 || i == kProbe) ? 0.5 : 1.0;
        coarse += w * f(a + (b - a) * i / kProbe).cwiseAbs();
    }
    Eigen::VectorXd scale = (std::abs(b - a) / kProbe) * coarse;
    for (Eigen::Index i = 0; i < scale.size(); ++i) scale[i] = std::max(scale[i], 1e-300);
    return simpson_rec(f, {a, m, b, fa, fm, fb, whole}, rel_tol, scale, std::abs(b - a), 0, max_depth);
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b, double rel_tol, int max_depth) {
    const auto vf = [&](double x) {
        Eigen::VectorXd v(1);
        v[0] = f(x);
        return v;
    };
    return adaptive_simpson(vf, a, b, rel_tol, max_depth)[0];
}

}  // namespace mbp
