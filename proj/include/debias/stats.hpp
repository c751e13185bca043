#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace debias::stats {

double mean(std::span<const double> xs);
/// Unbiased (n-1) sample variance; 0 for fewer than two values.
double sample_variance(std::span<const double> xs);
double sample_sd(std::span<const double> xs);

/// Median with the even-count convention of averaging the two central values.
double median(std::vector<double> xs);

/// Linear-interpolation quantile (R type 7) of an already sorted range.
double sorted_quantile(std::span<const double> sorted, double q);

/// Two-sided critical value t with P(|T| > t) = alpha for Student's t with `df` degrees of freedom.
double student_t_critical(double alpha, double df);

/// Welch two-sample t-test p-value (two-sided). Degenerate zero-variance cases return 1 when
/// the means agree and 0 otherwise.
double welch_p_value(std::span<const double> a, std::span<const double> b);

}  // namespace debias::stats
