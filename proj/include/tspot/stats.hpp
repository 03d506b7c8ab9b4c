#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "tspot/error.hpp"

namespace tspot {

/// Linear-interpolation sample quantile (R type 7) of an unsorted sample.
inline double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::invalid_argument, "quantile of empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

inline double mean(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample variance with n - 1 denominator.
inline double variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

inline double autocorrelation(std::span<const double> v, std::size_t lag) {
  if (v.size() <= lag + 1) return std::numeric_limits<double>::quiet_NaN();
  const double m = mean(v);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    den += (v[i] - m) * (v[i] - m);
    if (i + lag < v.size()) num += (v[i] - m) * (v[i + lag] - m);
  }
  return den > 0.0 ? num / den : 0.0;
}

/// Point summary of a posterior functional with a central 95% interval.
struct Summary {
  double mean = 0.0;
  double median = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
};

inline Summary summarize(std::span<const double> values) {
  Summary s;
  s.n = values.size();
  if (values.empty()) {
    s.mean = s.median = s.lo = s.hi = s.sd = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  std::vector<double> v(values.begin(), values.end());
  s.mean = mean(v);
  s.sd = std::sqrt(variance(v));
  s.median = quantile(v, 0.5);
  s.lo = quantile(v, 0.025);
  s.hi = quantile(v, 0.975);
  return s;
}

/// log(sum(exp(v))) computed stably.
inline double log_sum_exp(std::span<const double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  if (!std::isfinite(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace tspot
