#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "trajguard/error.hpp"

namespace trajguard {

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// P(|Z| >= |z|) for a standard normal Z.
inline double two_sided_p(double z) { return std::erfc(std::fabs(z) / std::sqrt(2.0)); }

inline constexpr double kSignificanceLevels[] = {0.05, 0.01, 0.001};

struct ZTestResult {
  double z = 0.0;
  double p_two_sided = 1.0;
  std::vector<double> significant_at;  // alphas from kSignificanceLevels with p < alpha

  bool significant(double alpha) const { return p_two_sided < alpha; }
};

inline ZTestResult make_z_result(double z) {
  ZTestResult r;
  r.z = z;
  r.p_two_sided = std::min(1.0, std::max(0.0, two_sided_p(z)));
  for (double alpha : kSignificanceLevels) {
    if (r.p_two_sided < alpha) r.significant_at.push_back(alpha);
  }
  return r;
}

/// Pooled two-proportion z-test. z = (p2 - p1) / SE, so z is positive when
/// the first group's proportion is the lower one.
inline ZTestResult two_proportion_z_test(std::uint64_t x1, std::uint64_t n1, std::uint64_t x2, std::uint64_t n2) {
  if (n1 == 0 || n2 == 0) throw Error(ErrorCode::degenerate_input, "both groups need at least one observation");
  if (x1 > n1 || x2 > n2) throw Error(ErrorCode::degenerate_input, "successes exceed group size");
  double p1 = static_cast<double>(x1) / static_cast<double>(n1);
  double p2 = static_cast<double>(x2) / static_cast<double>(n2);
  double pooled = static_cast<double>(x1 + x2) / static_cast<double>(n1 + n2);
  double se = std::sqrt(pooled * (1.0 - pooled) * (1.0 / static_cast<double>(n1) + 1.0 / static_cast<double>(n2)));
  if (se == 0.0) return make_z_result(0.0);
  return make_z_result((p2 - p1) / se);
}

struct SampleSummary {
  std::size_t n = 0;
  double mean = 0.0;
  double variance = 0.0;  // unbiased
};

inline SampleSummary summarize(std::span<const double> xs) {
  SampleSummary s;
  s.n = xs.size();
  if (s.n == 0) return s;
  double sum = 0.0;
  for (double x : xs) sum += x;
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - s.mean) * (x - s.mean);
    s.variance = ss / static_cast<double>(s.n - 1);
  }
  return s;
}

/// Large-sample z-test for a difference of means (unpooled variances), with
/// the same sign convention as two_proportion_z_test.
inline ZTestResult two_sample_mean_z_test(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw Error(ErrorCode::degenerate_input, "both samples need observations");
  auto sa = summarize(a);
  auto sb = summarize(b);
  double se = std::sqrt(sa.variance / static_cast<double>(sa.n) + sb.variance / static_cast<double>(sb.n));
  if (se == 0.0) return make_z_result(0.0);
  return make_z_result((sb.mean - sa.mean) / se);
}

/// Relative change of `treatment` against `control`, in percent.
inline double relative_change_percent(double control, double treatment) {
  if (control == 0.0) throw Error(ErrorCode::degenerate_input, "relative change against a zero baseline");
  return (treatment - control) / control * 100.0;
}

}  // namespace trajguard
