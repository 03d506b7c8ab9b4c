#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "tspot/error.hpp"
#include "tspot/random.hpp"

namespace tspot {

/// Below this |xi| every GPD formula switches to its exponential limit.
inline constexpr double kXiLimitTolerance = 1e-8;

/*
 * Generalized Pareto parameters for threshold excesses.
 *
 * Survival: (1 + xi x / sigma)_+^{-1/xi}, exponential for xi = 0.
 * Support is [0, sigma/(-xi)] for xi < 0 and [0, inf) otherwise.
 * Validation happens here only; the free functions below assume validity.
 */
class GpdParams {
 public:
  GpdParams(double sigma, double xi) : sigma_(sigma), xi_(xi) {
    if (!(sigma > 0.0) || !std::isfinite(sigma) || !std::isfinite(xi)) {
      std::ostringstream os;
      os << "invalid GPD parameters: sigma=" << sigma << " xi=" << xi;
      throw Error(ErrorCode::invalid_argument, os.str());
    }
  }

  double sigma() const noexcept { return sigma_; }
  double xi() const noexcept { return xi_; }

  bool bounded() const noexcept { return xi_ < 0.0; }

  /// sigma/(-xi) for xi < 0, +inf otherwise.
  double upper_endpoint() const noexcept {
    return xi_ < 0.0 ? sigma_ / -xi_ : std::numeric_limits<double>::infinity();
  }

  bool in_support(double x) const noexcept {
    return x >= 0.0 && (xi_ >= 0.0 || x <= upper_endpoint());
  }

  friend bool operator==(const GpdParams&, const GpdParams&) = default;

 private:
  double sigma_;
  double xi_;
};

namespace detail {

inline bool near_zero_shape(double xi) noexcept {
  return std::abs(xi) < kXiLimitTolerance;
}

}  // namespace detail

// Raw-argument forms. Used by the likelihood hot loop where (sigma, xi) come
// from a link that already guarantees sigma > 0.

inline double gpd_survival(double x, double sigma, double xi) noexcept {
  if (x <= 0.0) return 1.0;
  if (detail::near_zero_shape(xi)) return std::exp(-x / sigma);
  const double t = xi * x / sigma;
  if (t <= -1.0) return 0.0;
  return std::exp(-std::log1p(t) / xi);
}

inline double gpd_log_density(double x, double sigma, double xi) noexcept {
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  if (x < 0.0) return kNegInf;
  if (detail::near_zero_shape(xi)) return -std::log(sigma) - x / sigma;
  const double t = xi * x / sigma;
  if (t <= -1.0) return kNegInf;
  return -std::log(sigma) - (1.0 + 1.0 / xi) * std::log1p(t);
}

inline double gpd_survival(double x, const GpdParams& p) noexcept {
  return gpd_survival(x, p.sigma(), p.xi());
}

inline double gpd_log_density(double x, const GpdParams& p) noexcept {
  return gpd_log_density(x, p.sigma(), p.xi());
}

/// Inverse survival: the x with gpd_survival(x) == q, q in (0,1].
/// q == 0 is the upper endpoint for xi < 0 and an error otherwise.
inline double gpd_quantile(double q, const GpdParams& p) {
  if (!(q >= 0.0 && q <= 1.0)) {
    throw Error(ErrorCode::invalid_argument,
                "survival level must lie in [0,1]");
  }
  if (q == 1.0) return 0.0;
  if (q == 0.0) {
    if (p.xi() < 0.0 && !detail::near_zero_shape(p.xi())) {
      return p.upper_endpoint();
    }
    throw Error(ErrorCode::unbounded_quantile,
                "quantile at survival level 0 is unbounded for xi >= 0");
  }
  const double log_q = std::log(q);
  if (detail::near_zero_shape(p.xi())) return -p.sigma() * log_q;
  return p.sigma() / p.xi() * std::expm1(-p.xi() * log_q);
}

/// Inverse-transform draw.
template <UniformSource R>
double gpd_sample(R& source, const GpdParams& p) {
  return gpd_quantile(source.uniform(), p);
}

inline double gpd_mean(const GpdParams& p) {
  if (p.xi() >= 1.0) {
    throw Error(ErrorCode::mean_undefined, "GPD mean is infinite for xi >= 1");
  }
  return p.sigma() / (1.0 - p.xi());
}

inline double gpd_median(const GpdParams& p) noexcept {
  if (detail::near_zero_shape(p.xi())) return p.sigma() * std::numbers::ln2;
  return p.sigma() * std::expm1(p.xi() * std::numbers::ln2) / p.xi();
}

}  // namespace tspot
