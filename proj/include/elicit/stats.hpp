#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include <boost/math/distributions/students_t.hpp>

#include "elicit/errors.hpp"

namespace elicit {

struct PairedTest {
  double p_value = 1.0;
  double mean_difference = 0.0;  // mean(a - b)
  double standard_error = 0.0;
  double t_statistic = 0.0;
};

/// Two-sided paired t-test of a against b. When the differences have zero
/// variance the test degenerates: p = 0 for a nonzero mean, p = 1 otherwise.
inline PairedTest paired_significance(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw DimensionError("paired_significance: samples differ in length");
  if (a.size() < 2) throw DomainError("paired_significance: need at least two pairs");
  const double n = static_cast<double>(a.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  PairedTest out;
  out.mean_difference = mean;
  out.standard_error = std::sqrt(ss / (n - 1.0) / n);
  if (out.standard_error == 0.0) {
    out.p_value = mean != 0.0 ? 0.0 : 1.0;
    out.t_statistic = mean != 0.0 ? std::copysign(std::numeric_limits<double>::infinity(), mean) : 0.0;
    return out;
  }
  out.t_statistic = mean / out.standard_error;
  boost::math::students_t dist(n - 1.0);
  out.p_value = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(out.t_statistic))));
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double standard_error_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

}  // namespace elicit
