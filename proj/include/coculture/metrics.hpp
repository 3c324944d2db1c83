#pragma once

#include <optional>
#include <span>

namespace coculture::metrics {

// Mean of the last ceil(0.2 * N) samples. Requires at least 5 samples.
double steady_state_value(std::span<const double> signal);

// Earliest time after which every sample stays within +/-20% of the
// steady-state value. nullopt when the signal never settles. Throws when the
// steady-state value is zero (the relative band is undefined).
std::optional<double> settling_time(std::span<const double> signal,
                                    std::span<const double> times);

// Mean of |x - x_d| / sqrt(x_d) over samples with t >= t_s.
double nrmse(std::span<const double> signal, std::span<const double> times,
             double x_d, double t_s);

// Two-tailed paired t-test p-value. Zero-variance differences degenerate to
// p = 1 when the mean difference is zero and p = 0 otherwise.
double paired_ttest(std::span<const double> a, std::span<const double> b);

// CDF of Student's t distribution with `dof` degrees of freedom.
double student_t_cdf(double t, int dof);

}  // namespace coculture::metrics
