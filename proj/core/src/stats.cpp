#include "mbp/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mbp/error.hpp"

namespace mbp {

void RunningStats::add(double x) noexcept {
    ++n_;
    const double delta = x - mean_;
    mean_ += delta / static_cast<double>(n_);
    m2_ += delta * (x - mean_);
}

void RunningStats::merge(const RunningStats& other) noexcept {
    if (other.n_ == 0) return;
    if (n_ == 0) {
        *this = other;
        return;
    }
    const double na = static_cast<double>(n_);
    const double nb = static_cast<double>(other.n_);
    const double delta = other.mean_ - mean_;
    const double total = na + nb;
    mean_ += delta * nb / total;
    m2_ += other.m2_ + delta * delta * na * nb / total;
    n_ += other.n_;
}

double RunningStats::variance() const noexcept {
    return n_ < 2 ? 0.0 : m2_ / static_cast<double>(n_ - 1);
}

double RunningStats::stderror() const noexcept {
    return n_ < 2 ? 0.0 : std::sqrt(variance() / static_cast<double>(n_));
}

Estimate mean_estimate(std::span<const double> xs) {
    RunningStats s;
    for (double x : xs) s.add(x);
    return s.estimate();
}

Estimate jackknife_ratio(std::span<const double> num, std::span<const double> den,
                         std::size_t block_size) {
    if (num.size() != den.size()) throw RangeError("jackknife_ratio: size mismatch");
    if (block_size == 0) throw RangeError("jackknife_ratio: zero block size");
    const std::size_t blocks = num.size() / block_size;
    if (blocks < 2) throw StatisticsError("jackknife_ratio: need at least two blocks");

    std::vector<double> bnum(blocks, 0.0), bden(blocks, 0.0);
    for (std::size_t i = 0; i < num.size(); ++i) {
        const std::size_t b = std::min(i / block_size, blocks - 1);
        bnum[b] += num[i];
        bden[b] += den[i];
    }
    double tnum = 0.0, tden = 0.0;
    for (std::size_t b = 0; b < blocks; ++b) {
        tnum += bnum[b];
        tden += bden[b];
    }
    if (tden <= 0.0) throw StatisticsError("jackknife_ratio: zero denominator");

    RunningStats loo;
    for (std::size_t b = 0; b < blocks; ++b) {
        const double d = tden - bden[b];
        if (d <= 0.0) throw StatisticsError("jackknife_ratio: empty leave-one-out denominator");
        loo.add((tnum - bnum[b]) / d);
    }
    const double nb = static_cast<double>(blocks);
    // Sum of squared deviations equals (B-1) * sample variance.
    const double se = std::sqrt((nb - 1.0) / nb * loo.variance() * (nb - 1.0));
    return {tnum / tden, se, num.size()};
}

double log_ratio_stderr(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.size() < 2) throw RangeError("log_ratio_stderr: bad sizes");
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double vaa = 0, vbb = 0, vab = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        vaa += (a[i] - ma) * (a[i] - ma);
        vbb += (b[i] - mb) * (b[i] - mb);
        vab += (a[i] - ma) * (b[i] - mb);
    }
    vaa /= n - 1;
    vbb /= n - 1;
    vab /= n - 1;
    const double var = (vbb / (mb * mb) + vaa / (ma * ma) - 2.0 * vab / (ma * mb)) / n;
    return std::sqrt(std::max(var, 0.0));
}

double kolmogorov_tail(double lambda) {
    if (lambda < 1e-3) return 1.0;
    double sum = 0.0;
    for (int k = 1; k <= 200; ++k) {
        const double term = std::exp(-2.0 * k * k * lambda * lambda);
        sum += (k % 2 == 1 ? term : -term);
        if (term < 1e-17) break;
    }
    return std::clamp(2.0 * sum, 0.0, 1.0);
}

KsResult ks_test(std::vector<double> samples, const std::function<double(double)>& cdf) {
    if (samples.empty()) throw StatisticsError("ks_test: empty sample");
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double f = cdf(samples[i]);
        d = std::max({d, static_cast<double>(i + 1) / n - f, f - static_cast<double>(i) / n});
    }
    const double sn = std::sqrt(n);
    return {d, kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d)};
}

double z_score(const Estimate& a, const Estimate& b) {
    const double se = std::hypot(a.se, b.se);
    const double diff = std::abs(a.value - b.value);
    if (se == 0.0) return diff == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return diff / se;
}

}  // namespace mbp
