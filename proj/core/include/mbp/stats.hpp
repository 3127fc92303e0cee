#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace mbp {

/// Point estimate with its Monte Carlo standard error.
struct Estimate {
    double value = 0.0;
    double se = 0.0;
    std::size_t n = 0;
};

/// Welford running mean and variance.
class RunningStats {
public:
    void add(double x) noexcept;
    /// Chan et al. parallel combination; order of merges is the caller's concern.
    void merge(const RunningStats& other) noexcept;

    std::size_t count() const noexcept { return n_; }
    double mean() const noexcept { return mean_; }
    /// Unbiased sample variance (0 for fewer than two samples).
    double variance() const noexcept;
    double stderror() const noexcept;
    Estimate estimate() const noexcept { return {mean_, stderror(), n_}; }

private:
    std::size_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

/// Mean and standard error of a sample, reduced in index order.
Estimate mean_estimate(std::span<const double> xs);

/// Ratio estimator sum(num)/sum(den) with a delete-one-block jackknife error.
///
/// Samples are grouped into consecutive blocks of `block_size`; a trailing
/// partial block is merged into the last full one. Requires at least two blocks.
Estimate jackknife_ratio(std::span<const double> num, std::span<const double> den,
                         std::size_t block_size);

/// Delta-method standard error of log(mean(b)/mean(a)) for paired samples.
double log_ratio_stderr(std::span<const double> a, std::span<const double> b);

/// Kolmogorov distribution tail Q(lambda) = P(K > lambda).
double kolmogorov_tail(double lambda);

/// One-sample KS test against a continuous CDF; returns {D, p-value}.
struct KsResult {
    double statistic;
    double p_value;
};
KsResult ks_test(std::vector<double> samples, const std::function<double(double)>& cdf);

/// |a - b| / sqrt(se_a^2 + se_b^2); +inf when both errors vanish and a != b.
double z_score(const Estimate& a, const Estimate& b);

}  // namespace mbp
