#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tspot/error.hpp"
#include "tspot/features.hpp"
#include "tspot/gpd.hpp"

namespace tspot {

/// Model I: log-linear scale, linear shape (covariate regression on the
/// threshold-u excess distribution). Model II: threshold-stable
/// sigma_u = (alpha + u beta) e^gamma, xi = beta e^gamma.
enum class ModelKind { model1, model2 };

inline const char* to_string(ModelKind k) {
  return k == ModelKind::model1 ? "model1" : "model2";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "model1" || s == "I" || s == "1") return ModelKind::model1;
  if (s == "model2" || s == "II" || s == "2") return ModelKind::model2;
  throw Error(ErrorCode::config, "unknown model kind '" + std::string(s) + "'");
}

inline constexpr std::size_t block_count(ModelKind k) {
  return k == ModelKind::model1 ? 3 : 4;
}

/// Coefficient-vector name prefixes, in storage order.
inline std::vector<std::string> block_prefixes(ModelKind k) {
  if (k == ModelKind::model1) return {"s", "k", "r"};
  return {"a", "b", "g", "r"};
}

/// Restrictions applied to Model II when sampling.
struct ModelOptions {
  /// beta(c) == b_0 (slopes fixed at zero).
  bool beta_intercept_only = true;
  /// g_0 fixed at 0. Without it (a, b, g_0) and (k a, k b, g_0 - ln k) give
  /// identical likelihoods for every k > 0.
  bool anchor_gamma_intercept = true;

  friend bool operator==(const ModelOptions&, const ModelOptions&) = default;
};

/*
 * All coefficient vectors of one model, stored as consecutive blocks of
 * length `width` (= m + 1): (s, kappa, r) or (a, b, g, r).
 */
class Theta {
 public:
  Theta() = default;
  Theta(ModelKind kind, std::size_t width)
      : kind_(kind), width_(width), values_(block_count(kind) * width, 0.0) {}
  Theta(ModelKind kind, std::size_t width, std::vector<double> values)
      : kind_(kind), width_(width), values_(std::move(values)) {
    if (values_.size() != block_count(kind) * width) {
      throw Error(ErrorCode::invalid_argument, "theta length does not match model");
    }
  }

  ModelKind kind() const noexcept { return kind_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t covariates() const noexcept { return width_ - 1; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<const double> block(std::size_t b) const {
    return {values_.data() + b * width_, width_};
  }
  std::span<double> block(std::size_t b) { return {values_.data() + b * width_, width_}; }

  /// Rate block r_u (last in both layouts).
  std::span<const double> rate() const { return block(block_count(kind_) - 1); }
  std::span<double> rate() { return block(block_count(kind_) - 1); }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  std::vector<double>& storage() noexcept { return values_; }

  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  std::vector<std::string> coordinate_names() const {
    std::vector<std::string> names;
    for (const auto& p : block_prefixes(kind_)) {
      for (std::size_t j = 0; j < width_; ++j) names.push_back(p + "_" + std::to_string(j));
    }
    return names;
  }

  friend bool operator==(const Theta&, const Theta&) = default;

 private:
  ModelKind kind_ = ModelKind::model1;
  std::size_t width_ = 1;
  std::vector<double> values_{0.0, 0.0, 0.0};
};

struct ModelIParams {
  std::vector<double> s_u;
  std::vector<double> kappa;
  std::vector<double> r_u;

  Theta to_theta() const {
    if (kappa.size() != s_u.size() || r_u.size() != s_u.size()) {
      throw Error(ErrorCode::invalid_argument, "Model I vectors differ in length");
    }
    Theta t(ModelKind::model1, s_u.size());
    std::copy(s_u.begin(), s_u.end(), t.block(0).begin());
    std::copy(kappa.begin(), kappa.end(), t.block(1).begin());
    std::copy(r_u.begin(), r_u.end(), t.block(2).begin());
    return t;
  }

  static ModelIParams from_theta(const Theta& t) {
    auto v = [&](std::size_t b) {
      return std::vector<double>(t.block(b).begin(), t.block(b).end());
    };
    return {v(0), v(1), v(2)};
  }
};

struct ModelIIParams {
  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> g;
  std::vector<double> r_u;

  Theta to_theta() const {
    if (b.size() != a.size() || g.size() != a.size() || r_u.size() != a.size()) {
      throw Error(ErrorCode::invalid_argument, "Model II vectors differ in length");
    }
    Theta t(ModelKind::model2, a.size());
    std::copy(a.begin(), a.end(), t.block(0).begin());
    std::copy(b.begin(), b.end(), t.block(1).begin());
    std::copy(g.begin(), g.end(), t.block(2).begin());
    std::copy(r_u.begin(), r_u.end(), t.block(3).begin());
    return t;
  }

  static ModelIIParams from_theta(const Theta& t) {
    auto v = [&](std::size_t bl) {
      return std::vector<double>(t.block(bl).begin(), t.block(bl).end());
    };
    return {v(0), v(1), v(2), v(3)};
  }
};

/// Local GPD parameters and exceedance rate at one covariate value.
struct LocalGpd {
  double sigma;
  double xi;
  double rho;

  GpdParams gpd() const { return GpdParams(sigma, xi); }
};

inline double dot(std::span<const double> a, std::span<const double> b) noexcept {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double logistic(double eta) noexcept {
  return eta >= 0.0 ? 1.0 / (1.0 + std::exp(-eta))
                    : std::exp(eta) / (1.0 + std::exp(eta));
}

/// log(1 + e^x) without overflow.
inline double softplus(double x) noexcept {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline constexpr double kMaxLogScale = 700.0;

namespace detail {

inline void check_width(const Theta& theta, std::span<const double> c_tilde) {
  if (theta.width() != c_tilde.size()) {
    throw Error(ErrorCode::invalid_argument, "covariate vector does not match theta");
  }
}

}  // namespace detail

/// Model I link; nullopt when exp(s.c) leaves the representable range.
inline std::optional<LocalGpd> try_model1_link(const Theta& theta,
                                               std::span<const double> c_tilde) {
  detail::check_width(theta, c_tilde);
  const double log_sigma = dot(theta.block(0), c_tilde);
  if (!(std::abs(log_sigma) < kMaxLogScale)) return std::nullopt;
  return LocalGpd{std::exp(log_sigma), dot(theta.block(1), c_tilde),
                  logistic(dot(theta.rate(), c_tilde))};
}

inline LocalGpd model1_link(const Theta& theta, std::span<const double> c_tilde) {
  if (auto l = try_model1_link(theta, c_tilde)) return *l;
  throw Error(ErrorCode::constraint_violation, "Model I scale overflow");
}

inline LocalGpd model1_link(const ModelIParams& p, std::span<const double> c_tilde) {
  return model1_link(p.to_theta(), c_tilde);
}

/// Model II link at threshold u; nullopt when alpha + u beta <= 0 or
/// e^gamma overflows.
inline std::optional<LocalGpd> try_model2_link(const Theta& theta, double u,
                                               std::span<const double> c_tilde) {
  detail::check_width(theta, c_tilde);
  const double alpha = dot(theta.block(0), c_tilde);
  const double beta = dot(theta.block(1), c_tilde);
  const double gamma = dot(theta.block(2), c_tilde);
  const double base = alpha + u * beta;
  if (!(base > 0.0) || !(std::abs(gamma) < kMaxLogScale)) return std::nullopt;
  const double scale = std::exp(gamma);
  return LocalGpd{base * scale, beta * scale, logistic(dot(theta.rate(), c_tilde))};
}

inline LocalGpd model2_link(const Theta& theta, double u, std::span<const double> c_tilde) {
  if (auto l = try_model2_link(theta, u, c_tilde)) return *l;
  throw Error(ErrorCode::constraint_violation,
              "Model II constraint alpha + u*beta > 0 violated");
}

inline LocalGpd model2_link(const ModelIIParams& p, double u,
                            std::span<const double> c_tilde) {
  return model2_link(p.to_theta(), u, c_tilde);
}

inline std::optional<LocalGpd> try_link(const Theta& theta, double u,
                                        std::span<const double> c_tilde) {
  return theta.kind() == ModelKind::model1 ? try_model1_link(theta, c_tilde)
                                           : try_model2_link(theta, u, c_tilde);
}

inline LocalGpd link(const Theta& theta, double u, std::span<const double> c_tilde) {
  return theta.kind() == ModelKind::model1 ? model1_link(theta, c_tilde)
                                           : model2_link(theta, u, c_tilde);
}

/*
 * Parameters for the higher threshold u + x:
 *   sigma' = sigma + x xi, xi' = xi, rho' = rho * survival(x; sigma, xi).
 */
inline LocalGpd shift_threshold(const LocalGpd& local, double x) {
  if (!(x >= 0.0)) throw Error(ErrorCode::invalid_argument, "shift must be >= 0");
  const double sigma = local.sigma + x * local.xi;
  if (!(sigma > 0.0)) {
    throw Error(ErrorCode::degenerate_shift,
                "shift reaches the upper endpoint of the bounded GPD");
  }
  return {sigma, local.xi, local.rho * gpd_survival(x, local.sigma, local.xi)};
}

// ---------------------------------------------------------------------------
// Indicators and parameter layout

using Indicators = std::vector<std::uint8_t>;

/// Zeroes coefficient j (j = 1..m) of every block where indicator j-1 is off.
inline void apply_indicators(std::span<double> theta, std::size_t width,
                             const Indicators& included) {
  if (included.empty()) return;
  const std::size_t blocks = theta.size() / width;
  for (std::size_t j = 0; j < included.size(); ++j) {
    if (included[j]) continue;
    for (std::size_t b = 0; b < blocks; ++b) theta[b * width + j + 1] = 0.0;
  }
}

inline Theta effective_theta(const Theta& theta, const Indicators& included) {
  Theta out = theta;
  apply_indicators(out.values(), out.width(), included);
  return out;
}

/// 1 for coordinates the sampler moves, 0 for ones held fixed.
inline std::vector<std::uint8_t> free_coordinates(ModelKind kind, std::size_t width,
                                                  const ModelOptions& opts) {
  std::vector<std::uint8_t> free(block_count(kind) * width, 1);
  if (kind == ModelKind::model2) {
    if (opts.beta_intercept_only) {
      for (std::size_t j = 1; j < width; ++j) free[width + j] = 0;
    }
    if (opts.anchor_gamma_intercept) free[2 * width] = 0;
  }
  return free;
}

// ---------------------------------------------------------------------------
// Likelihood

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();

/// Per-row contribution; -inf when the link is invalid or an exceedance is
/// outside its local support.
inline double row_log_likelihood(const Theta& theta, double u,
                                 std::span<const double> c_tilde, double response) {
  const auto local = try_link(theta, u, c_tilde);
  if (!local) return kNegInf;
  const double eta = dot(theta.rate(), c_tilde);
  if (response > u) {
    return -softplus(-eta) + gpd_log_density(response - u, local->sigma, local->xi);
  }
  return -softplus(eta);
}

/*
 * Full-data log-likelihood:
 *   sum_t (1 - d_t) ln(1 - rho_t) + d_t (ln rho_t + ln gpd(X_t - u)).
 * Straightforward row-by-row form; PotLikelihood is the fast equivalent.
 */
inline double log_likelihood(const Theta& theta, const Design& design) {
  if (theta.width() != design.width) {
    throw Error(ErrorCode::invalid_argument, "theta does not match design width");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < design.rows(); ++i) {
    const double l = row_log_likelihood(theta, design.threshold, design.row(i),
                                        design.response[i]);
    if (l == kNegInf) return kNegInf;
    total += l;
  }
  return total;
}

/*
 * Likelihood evaluator for the sampler's hot loop.
 *
 * Rows with identical covariate vectors form one cell: the rate term is
 * count-weighted, the link is evaluated once per cell, and each exceedance
 * only costs one log1p. Summation order is fixed, so results are
 * reproducible.
 */
class PotLikelihood {
 public:
  PotLikelihood(const Design& design, ModelKind kind)
      : kind_(kind), width_(design.width), u_(design.threshold) {
    std::unordered_map<std::string, std::size_t> cell_of;
    std::vector<std::size_t> row_cell(design.rows());
    for (std::size_t i = 0; i < design.rows(); ++i) {
      const auto row = design.row(i);
      std::string key(reinterpret_cast<const char*>(row.data()),
                      row.size() * sizeof(double));
      auto [it, inserted] = cell_of.emplace(std::move(key), cells_);
      if (inserted) {
        cell_x_.insert(cell_x_.end(), row.begin(), row.end());
        cell_n_.push_back(0.0);
        cell_k_.push_back(0.0);
        ++cells_;
      }
      row_cell[i] = it->second;
      cell_n_[it->second] += 1.0;
      if (design.exceeds(i)) cell_k_[it->second] += 1.0;
    }
    // Exceedances grouped by cell, in row order within a cell.
    exc_start_.assign(cells_ + 1, 0);
    for (std::size_t c = 0; c < cells_; ++c) {
      exc_start_[c + 1] = exc_start_[c] + static_cast<std::size_t>(cell_k_[c]);
    }
    exc_y_.resize(exc_start_[cells_]);
    std::vector<std::size_t> fill(exc_start_.begin(), exc_start_.end() - 1);
    for (std::size_t i = 0; i < design.rows(); ++i) {
      if (design.exceeds(i)) exc_y_[fill[row_cell[i]]++] = design.response[i] - u_;
    }
    for (std::size_t c = 0; c < cells_; ++c) {
      double sum = 0.0;
      for (std::size_t e = exc_start_[c]; e < exc_start_[c + 1]; ++e) sum += exc_y_[e];
      exc_sum_.push_back(sum);
    }
    rows_ = design.rows();
  }

  ModelKind kind() const noexcept { return kind_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t dimension() const noexcept { return block_count(kind_) * width_; }
  double threshold() const noexcept { return u_; }
  std::size_t rows() const noexcept { return rows_; }
  std::size_t distinct_covariate_rows() const noexcept { return cells_; }
  std::size_t exceedances() const noexcept { return exc_y_.size(); }
  double mean_excess() const noexcept {
    double sum = 0.0;
    for (double v : exc_sum_) sum += v;
    return exc_y_.empty() ? 0.0 : sum / static_cast<double>(exc_y_.size());
  }

  double operator()(std::span<const double> theta) const {
    return kind_ == ModelKind::model1 ? eval_model1(theta) : eval_model2(theta);
  }

 private:
  std::span<const double> blk(std::span<const double> theta, std::size_t b) const {
    return theta.subspan(b * width_, width_);
  }
  std::span<const double> cell(std::size_t i) const {
    return {cell_x_.data() + i * width_, width_};
  }

  double rate_term(std::size_t c, double eta) const {
    const double k = cell_k_[c];
    const double n = cell_n_[c];
    double total = 0.0;
    if (k > 0.0) total -= k * softplus(-eta);
    if (n > k) total -= (n - k) * softplus(eta);
    return total;
  }

  /// Sum of GPD log densities over the exceedances of cell c, given
  /// log sigma, xi and xi / sigma for that cell.
  double gpd_term(std::size_t c, double log_sigma, double xi, double xi_over_sigma) const {
    const std::size_t lo = exc_start_[c];
    const std::size_t hi = exc_start_[c + 1];
    if (lo == hi) return 0.0;
    const double k = static_cast<double>(hi - lo);
    if (std::abs(xi) < kXiLimitTolerance) {
      return -k * log_sigma - exc_sum_[c] * std::exp(-log_sigma);
    }
    double acc = 0.0;
    for (std::size_t e = lo; e < hi; ++e) {
      const double t = xi_over_sigma * exc_y_[e];
      if (t <= -1.0) return kNegInf;
      acc += std::log1p(t);
    }
    return -k * log_sigma - (1.0 + 1.0 / xi) * acc;
  }

  double eval_model1(std::span<const double> theta) const {
    const auto s = blk(theta, 0);
    const auto kappa = blk(theta, 1);
    const auto r = blk(theta, 2);
    double total = 0.0;
    for (std::size_t c = 0; c < cells_; ++c) {
      const auto x = cell(c);
      const double log_sigma = dot(s, x);
      if (!(std::abs(log_sigma) < kMaxLogScale)) return kNegInf;
      const double xi = dot(kappa, x);
      total += rate_term(c, dot(r, x));
      const double g = gpd_term(c, log_sigma, xi, xi * std::exp(-log_sigma));
      if (g == kNegInf) return kNegInf;
      total += g;
    }
    return total;
  }

  double eval_model2(std::span<const double> theta) const {
    const auto a = blk(theta, 0);
    const auto b = blk(theta, 1);
    const auto g = blk(theta, 2);
    const auto r = blk(theta, 3);
    double total = 0.0;
    for (std::size_t c = 0; c < cells_; ++c) {
      const auto x = cell(c);
      const double beta = dot(b, x);
      const double base = dot(a, x) + u_ * beta;
      const double gamma = dot(g, x);
      if (!(base > 0.0) || !(std::abs(gamma) < kMaxLogScale)) return kNegInf;
      total += rate_term(c, dot(r, x));
      // xi / sigma == beta / base
      const double gt = gpd_term(c, std::log(base) + gamma, beta * std::exp(gamma), beta / base);
      if (gt == kNegInf) return kNegInf;
      total += gt;
    }
    return total;
  }

  ModelKind kind_;
  std::size_t width_;
  double u_;
  std::size_t rows_ = 0;
  std::size_t cells_ = 0;
  std::vector<double> cell_x_, cell_n_, cell_k_;
  std::vector<std::size_t> exc_start_;
  std::vector<double> exc_y_, exc_sum_;
};

}  // namespace tspot
