#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "tspot/error.hpp"
#include "tspot/features.hpp"
#include "tspot/gpd.hpp"
#include "tspot/model.hpp"
#include "tspot/random.hpp"
#include "tspot/sampler.hpp"
#include "tspot/stats.hpp"

namespace tspot {

// ---------------------------------------------------------------------------
// Goodness of fit

/// P(K > lambda) for the limiting Kolmogorov distribution.
inline double kolmogorov_survival(double lambda) {
  if (!(lambda > 0.0)) return 1.0;
  constexpr double kTol = 1e-12;
  if (lambda < 1.0) {
    // K(l) = sqrt(2 pi) / l * sum_k exp(-(2k-1)^2 pi^2 / (8 l^2))
    const double c = -std::numbers::pi * std::numbers::pi / (8.0 * lambda * lambda);
    double s = 0.0;
    for (int k = 1; k < 1000; ++k) {
      const double odd = 2.0 * k - 1.0;
      const double term = std::exp(c * odd * odd);
      s += term;
      if (term < kTol) break;
    }
    return std::clamp(1.0 - std::sqrt(2.0 * std::numbers::pi) / lambda * s, 0.0, 1.0);
  }
  double s = 0.0;
  for (int k = 1; k < 1000; ++k) {
    const double term = std::exp(-2.0 * k * k * lambda * lambda);
    s += (k % 2 == 1) ? term : -term;
    if (term < kTol) break;
  }
  return std::clamp(2.0 * s, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

/// One-sample Kolmogorov-Smirnov test against Uniform(0,1), asymptotic p-value.
inline KsResult ks_uniform_test(std::span<const double> sample) {
  if (sample.empty()) throw Error(ErrorCode::invalid_argument, "KS test of empty sample");
  std::vector<double> x(sample.begin(), sample.end());
  std::sort(x.begin(), x.end());
  const double n = static_cast<double>(x.size());
  double d = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double v = std::clamp(x[i], 0.0, 1.0);
    d = std::max({d, static_cast<double>(i + 1) / n - v, v - static_cast<double>(i) / n});
  }
  return {d, kolmogorov_survival(std::sqrt(n) * d), x.size()};
}

struct PitResult {
  std::vector<double> values;
  /// Design row of each value.
  std::vector<std::size_t> rows;
  /// Rows whose excess fell outside the local support (value recorded as 0).
  std::vector<std::size_t> outside_support;
};

/*
 * w_t = survival(X_t - u) under the local GPD of each exceedance row.
 * `link(c_tilde)` returns std::optional<LocalGpd>.
 */
template <class LinkFn>
PitResult pit_transform(const Design& d, LinkFn&& link) {
  PitResult out;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    if (!d.exceeds(i)) continue;
    const std::optional<LocalGpd> local = link(d.row(i));
    if (!local) {
      throw Error(ErrorCode::constraint_violation,
                  "fitted link invalid at design row " + std::to_string(i));
    }
    const GpdParams gp(local->sigma, local->xi);
    const double y = d.response[i] - d.threshold;
    if (!gp.in_support(y) || (gp.bounded() && y >= gp.upper_endpoint())) {
      out.outside_support.push_back(i);
    }
    out.values.push_back(gpd_survival(y, gp));
    out.rows.push_back(i);
  }
  return out;
}

/// PIT with the survival averaged over posterior draws.
inline PitResult posterior_pit(const Design& d, const PosteriorSampleSet& samples) {
  if (samples.draws.empty()) throw Error(ErrorCode::insufficient_samples, "no posterior draws");
  std::vector<Theta> thetas;
  for (std::size_t k = 0; k < samples.draws.size(); ++k) thetas.push_back(samples.effective_theta(k));
  PitResult out;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    if (!d.exceeds(i)) continue;
    const double y = d.response[i] - d.threshold;
    double sum = 0.0;
    bool inside = false;
    for (const auto& th : thetas) {
      const auto local = try_link(th, d.threshold, d.row(i));
      if (!local) {
        throw Error(ErrorCode::constraint_violation,
                    "posterior draw invalid at design row " + std::to_string(i));
      }
      const double s = gpd_survival(y, local->sigma, local->xi);
      inside = inside || s > 0.0;
      sum += s;
    }
    if (!inside) out.outside_support.push_back(i);
    out.values.push_back(sum / static_cast<double>(thetas.size()));
    out.rows.push_back(i);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Exceedance classification

struct Classification {
  double cutoff = 0.0;
  double rate = 0.0;
  std::size_t errors = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
};

/// Errors when rows with rho > cutoff are classified as extreme.
inline Classification classify_at(std::span<const double> rho, std::span<const std::uint8_t> extreme,
                                  double cutoff) {
  Classification c;
  c.cutoff = cutoff;
  for (std::size_t i = 0; i < rho.size(); ++i) {
    const bool predicted = rho[i] > cutoff;
    if (predicted && !extreme[i]) ++c.false_positives;
    if (!predicted && extreme[i]) ++c.false_negatives;
  }
  c.errors = c.false_positives + c.false_negatives;
  c.rate = rho.empty() ? 0.0 : static_cast<double>(c.errors) / static_cast<double>(rho.size());
  return c;
}

/*
 * Cutoff minimizing false positives + false negatives. Candidates are 0 (every
 * row extreme) and each distinct fitted rho; ties go to the larger cutoff.
 */
inline Classification misclassification(std::span<const double> rho,
                                        std::span<const std::uint8_t> extreme) {
  if (rho.size() != extreme.size()) {
    throw Error(ErrorCode::invalid_argument, "rho and label lengths differ");
  }
  if (rho.empty()) throw Error(ErrorCode::invalid_argument, "no rows to classify");
  std::vector<std::size_t> order(rho.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rho[a] < rho[b]; });

  std::size_t total_neg = 0;
  for (auto e : extreme) total_neg += e ? 0 : 1;
  // Cutoff 0 predicts every row with rho > 0 as extreme.
  std::size_t fn = 0, fp = total_neg;
  std::size_t i = 0;
  for (; i < order.size() && rho[order[i]] <= 0.0; ++i) {
    if (extreme[order[i]]) ++fn; else --fp;
  }
  std::size_t best_errors = fn + fp;
  double best_cut = 0.0;
  std::size_t best_fp = fp, best_fn = fn;
  while (i < order.size()) {
    const double v = rho[order[i]];
    for (; i < order.size() && rho[order[i]] == v; ++i) {
      if (extreme[order[i]]) ++fn; else --fp;
    }
    if (fn + fp <= best_errors) {
      best_errors = fn + fp;
      best_cut = v;
      best_fp = fp;
      best_fn = fn;
    }
  }
  Classification c;
  c.cutoff = best_cut;
  c.errors = best_errors;
  c.false_positives = best_fp;
  c.false_negatives = best_fn;
  c.rate = static_cast<double>(best_errors) / static_cast<double>(rho.size());
  return c;
}

/// Fitted exceedance probabilities and labels of every design row.
template <class RhoFn>
std::pair<std::vector<double>, std::vector<std::uint8_t>> rate_labels(const Design& d, RhoFn&& rho) {
  std::vector<double> r;
  std::vector<std::uint8_t> e;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    r.push_back(rho(d.row(i)));
    e.push_back(d.exceeds(i) ? 1 : 0);
  }
  return {r, e};
}

/// Posterior-mean exceedance probability at a covariate vector.
inline double posterior_mean_rate(const PosteriorSampleSet& s, std::span<const double> c) {
  double sum = 0.0;
  for (std::size_t k = 0; k < s.draws.size(); ++k) {
    const auto th = s.effective_theta(k);
    sum += logistic(dot(th.rate(), c));
  }
  return sum / static_cast<double>(s.draws.size());
}

// ---------------------------------------------------------------------------
// Simulation of concentration sequences

/*
 * Source of non-exceedance values. The baseline draws a below-threshold
 * observation from the same daylight or night period as the trajectory row,
 * falling back to all below-threshold observations.
 */
class NonExceedancePool {
 public:
  NonExceedancePool() = default;

  static NonExceedancePool global(const Design& d) {
    NonExceedancePool p;
    p.all_ = below_values(d, [](std::size_t) { return true; });
    if (p.all_.empty()) throw Error(ErrorCode::invalid_argument, "no below-threshold observations");
    p.row_period_.assign(d.rows(), -1);
    return p;
  }

  static NonExceedancePool by_period(const Design& d) {
    NonExceedancePool p = global(d);
    std::map<std::int64_t, std::size_t> index;
    for (std::size_t i = 0; i < d.rows(); ++i) {
      const auto key = period_key(d.timestamps[i]);
      auto [it, inserted] = index.emplace(key, p.periods_.size());
      if (inserted) p.periods_.emplace_back();
      p.row_period_[i] = static_cast<std::ptrdiff_t>(it->second);
      if (!d.exceeds(i)) p.periods_[it->second].push_back(d.response[i]);
    }
    return p;
  }

  template <UniformSource R>
  double operator()(std::size_t row, R& rng) const {
    const std::ptrdiff_t k = row < row_period_.size() ? row_period_[row] : -1;
    if (k >= 0 && !periods_[static_cast<std::size_t>(k)].empty()) {
      const auto& v = periods_[static_cast<std::size_t>(k)];
      return v[pick(rng, v.size())];
    }
    return all_[pick(rng, all_.size())];
  }

 private:
  template <class Keep>
  static std::vector<double> below_values(const Design& d, Keep keep) {
    std::vector<double> v;
    for (std::size_t i = 0; i < d.rows(); ++i) {
      if (!d.exceeds(i) && keep(i)) v.push_back(d.response[i]);
    }
    return v;
  }
  template <UniformSource R>
  static std::size_t pick(R& rng, std::size_t n) {
    return std::min(n - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)));
  }

  std::vector<double> all_;
  std::vector<std::vector<double>> periods_;
  std::vector<std::ptrdiff_t> row_period_;
};

/*
 * Scenario pool: below-threshold observations from the same daylight or night
 * period whose observed total flow lies in [lo, hi] times the flow observed
 * at the trajectory row. When that set is empty the observed value at the
 * row is kept.
 */
class FlowWindowPool {
 public:
  FlowWindowPool(const Design& d, std::span<const double> observed_flow, double lo, double hi)
      : lo_(lo), hi_(hi), observed_(d.response), flow_(observed_flow.begin(), observed_flow.end()) {
    if (observed_flow.size() != d.rows()) {
      throw Error(ErrorCode::invalid_argument, "one flow value per design row required");
    }
    std::map<std::int64_t, std::size_t> index;
    row_period_.resize(d.rows());
    for (std::size_t i = 0; i < d.rows(); ++i) {
      auto [it, inserted] = index.emplace(period_key(d.timestamps[i]), periods_.size());
      if (inserted) periods_.emplace_back();
      row_period_[i] = it->second;
      if (!d.exceeds(i)) periods_[it->second].push_back({flow_[i], d.response[i]});
    }
    for (auto& p : periods_) std::sort(p.begin(), p.end());
  }

  template <UniformSource R>
  double operator()(std::size_t row, R& rng) const {
    const auto& p = periods_[row_period_[row]];
    const double f = flow_[row];
    const auto first = std::lower_bound(p.begin(), p.end(), std::pair{lo_ * f, -kInf});
    const auto last = std::upper_bound(p.begin(), p.end(), std::pair{hi_ * f, kInf});
    if (first >= last) {
      ++fallbacks_;
      return observed_[row];
    }
    const auto n = static_cast<std::size_t>(last - first);
    const auto k = std::min(n - 1, static_cast<std::size_t>(rng.uniform() * static_cast<double>(n)));
    return (first + static_cast<std::ptrdiff_t>(k))->second;
  }

  std::size_t fallbacks() const noexcept { return fallbacks_; }

 private:
  static constexpr double kInf = std::numeric_limits<double>::infinity();
  double lo_, hi_;
  std::vector<double> observed_;
  std::vector<double> flow_;
  std::vector<std::vector<std::pair<double, double>>> periods_;
  std::vector<std::size_t> row_period_;
  mutable std::size_t fallbacks_ = 0;
};

struct SimulatedSequence {
  std::vector<double> values;
  std::vector<std::uint8_t> exceeds;
  std::size_t exceedances = 0;
};

/*
 * Simulates n concentrations along the trajectory's covariate rows (cycled).
 * The first L values (L = number of target lags) are the observed responses;
 * afterwards each step draws U and emits u + GPD when rho(c_t) > U, otherwise
 * a value from `below(row, rng)`. Emitted values replace the target's lag
 * columns of later rows, mapped through `standardizer`.
 *
 * With `clamp_lags`, fed-back lags are limited to the observed response
 * range. The links are linear in the lags, so one extreme draw can push the
 * next covariate vector far outside the fitted data and the sequence runs
 * away. Emitted values themselves are never clamped.
 */
template <class LinkFn, class BelowFn, UniformSource R>
SimulatedSequence simulate_sequence(const Design& trajectory,
                                    std::span<const std::size_t> lag_columns,
                                    const Standardizer& standardizer, LinkFn&& link,
                                    BelowFn&& below, R& rng, std::size_t n,
                                    bool clamp_lags = false) {
  if (trajectory.rows() == 0) throw Error(ErrorCode::empty_design, "empty trajectory");
  const double u = trajectory.threshold;
  const std::size_t lags = lag_columns.size();
  SimulatedSequence out;
  out.values.reserve(n);
  out.exceeds.reserve(n);
  std::vector<double> c(trajectory.width);
  const auto [lo_it, hi_it] = std::minmax_element(trajectory.response.begin(), trajectory.response.end());
  const double lag_lo = clamp_lags ? *lo_it : -std::numeric_limits<double>::infinity();
  const double lag_hi = clamp_lags ? *hi_it : std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < n; ++t) {
    const std::size_t row = t % trajectory.rows();
    if (t < lags) {
      const double v = trajectory.response[row];
      out.values.push_back(v);
      out.exceeds.push_back(0);
      continue;
    }
    const auto src = trajectory.row(row);
    std::copy(src.begin(), src.end(), c.begin());
    for (std::size_t j = 0; j < lags; ++j) {
      const std::size_t col = lag_columns[j];
      const double v = std::clamp(out.values[t - j - 1], lag_lo, lag_hi);
      c[col] = standardizer.mean.empty() ? v : standardizer.forward(col - 1, v);
    }
    const std::optional<LocalGpd> local = link(std::span<const double>(c));
    if (!local) {
      throw Error(ErrorCode::constraint_violation,
                  "fitted link invalid at simulated step " + std::to_string(t));
    }
    if (local->rho > rng.uniform()) {
      out.values.push_back(u + gpd_sample(rng, GpdParams(local->sigma, local->xi)));
      out.exceeds.push_back(1);
      ++out.exceedances;
    } else {
      out.values.push_back(below(row, rng));
      out.exceeds.push_back(0);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Return levels

/// Observations per year on the 15-min grid, as used for horizon conversion.
inline constexpr double kObservationsPerYear = 35136.0;

inline double horizon_probability(double years) {
  if (!(years > 0.0)) throw Error(ErrorCode::invalid_argument, "horizon must be positive");
  return 1.0 / (kObservationsPerYear * years);
}

struct ReturnLevelEstimate {
  double p = 0.0;
  double level = 0.0;
  double lo = 0.0;
  double hi = 0.0;
  bool conditional = false;
  std::optional<double> horizon_years;
  /// The level is at or below the threshold (too few simulated exceedances).
  bool below_threshold = false;
  std::vector<double> replicate_levels;
};

/// k-th largest (1-based) of the exceedance values; u when there are fewer
/// than k exceedances.
inline double upper_order_statistic(std::vector<double> exceedance_values, std::size_t k, double u,
                                    bool* below = nullptr) {
  if (k == 0) throw Error(ErrorCode::invalid_argument, "order statistic index must be >= 1");
  if (below) *below = k > exceedance_values.size();
  if (k > exceedance_values.size()) return u;
  std::nth_element(exceedance_values.begin(), exceedance_values.begin() + static_cast<std::ptrdiff_t>(k - 1),
                   exceedance_values.end(), std::greater<>());
  return exceedance_values[k - 1];
}

inline std::size_t order_index(std::size_t n, double p) {
  return static_cast<std::size_t>(std::ceil(static_cast<double>(n) * p - 1e-9));
}

/*
 * Marginal level exceeded with probability p per observation: the ceil(N p)-th
 * largest pooled simulated value, with a 95% interval from per-replicate
 * estimates. Only simulated exceedances enter the tally.
 */
inline ReturnLevelEstimate marginal_return_level(const std::vector<SimulatedSequence>& replicates,
                                                 double p, double u) {
  if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::invalid_argument, "p must be in (0,1)");
  if (replicates.empty()) throw Error(ErrorCode::insufficient_samples, "no simulated replicates");
  std::size_t total = 0;
  std::vector<double> pooled;
  ReturnLevelEstimate est;
  est.p = p;
  for (const auto& r : replicates) {
    const std::size_t n = r.values.size();
    if (static_cast<double>(n) * p < 1.0) {
      throw Error(ErrorCode::insufficient_samples,
                  "replicate of length " + std::to_string(n) + " is too short for p");
    }
    total += n;
    std::vector<double> exc;
    for (std::size_t t = 0; t < n; ++t) {
      if (r.exceeds[t]) exc.push_back(r.values[t]);
    }
    est.replicate_levels.push_back(upper_order_statistic(exc, order_index(n, p), u));
    pooled.insert(pooled.end(), exc.begin(), exc.end());
  }
  if (static_cast<double>(total) < 20.0 / p - 1e-6) {
    throw Error(ErrorCode::insufficient_samples,
                "need at least 20/p simulated values, got " + std::to_string(total));
  }
  bool below = false;
  est.level = upper_order_statistic(std::move(pooled), order_index(total, p), u, &below);
  est.below_threshold = below;
  est.lo = std::min(quantile(est.replicate_levels, 0.025), est.level);
  est.hi = std::max(quantile(est.replicate_levels, 0.975), est.level);
  return est;
}

/*
 * Level exceeded with probability p given covariates: inverts
 * rho_{u+x} = rho * survival(x), i.e. u + quantile(p / rho).
 */
inline double conditional_return_level(const LocalGpd& local, double u, double p) {
  if (!(p > 0.0)) throw Error(ErrorCode::invalid_argument, "p must be positive");
  if (p > local.rho) {
    throw Error(ErrorCode::level_below_threshold,
                "p exceeds the exceedance rate; the level would lie below the threshold");
  }
  if (p == local.rho) return u;
  return u + gpd_quantile(p / local.rho, GpdParams(local.sigma, local.xi));
}

/// Posterior summary of the conditional level at one covariate vector.
inline ReturnLevelEstimate conditional_return_level(const PosteriorSampleSet& s,
                                                    std::span<const double> c, double u, double p) {
  ReturnLevelEstimate est;
  est.p = p;
  est.conditional = true;
  for (std::size_t k = 0; k < s.draws.size(); ++k) {
    const auto local = try_link(s.effective_theta(k), u, c);
    if (!local) throw Error(ErrorCode::constraint_violation, "posterior draw invalid at covariates");
    est.replicate_levels.push_back(conditional_return_level(*local, u, p));
  }
  const Summary sm = summarize(est.replicate_levels);
  est.level = sm.median;
  est.lo = sm.lo;
  est.hi = sm.hi;
  return est;
}

struct SimulationPlan {
  std::size_t replicates = 20;
  std::size_t length = 0;  // per replicate; 0 means 20 / min(p) / replicates
  std::uint64_t seed = 1;
  /// Limit fed-back lags to the observed response range.
  bool clamp_lags = false;
};

/*
 * Replicate r uses posterior draw r (mod draws, spread evenly) and its own
 * random stream, so replicates are independent and the result is
 * deterministic in the plan's seed.
 */
template <class BelowFn>
std::vector<SimulatedSequence> simulate_replicates(const Design& trajectory,
                                                   std::span<const std::size_t> lag_columns,
                                                   const Standardizer& standardizer,
                                                   const PosteriorSampleSet& samples,
                                                   BelowFn&& below, const SimulationPlan& plan) {
  if (samples.draws.empty()) throw Error(ErrorCode::insufficient_samples, "no posterior draws");
  std::vector<SimulatedSequence> out;
  const std::size_t nd = samples.draws.size();
  for (std::size_t r = 0; r < plan.replicates; ++r) {
    const std::size_t k = (r * nd) / std::max<std::size_t>(plan.replicates, 1) % nd;
    const Theta th = samples.effective_theta(k);
    RandomSource rng(derive_seed(plan.seed, r));
    auto link = [&](std::span<const double> c) { return try_link(th, trajectory.threshold, c); };
    out.push_back(simulate_sequence(trajectory, lag_columns, standardizer, link, below, rng,
                                    plan.length, plan.clamp_lags));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model comparison

struct MarginalLikelihood {
  double log_value = 0.0;
  double ess = 0.0;
  std::size_t used = 0;
  bool unstable = false;
  std::string method;
};

/*
 * Harmonic-mean estimate of the log marginal likelihood from posterior
 * log-likelihoods, after dropping the lowest `trim` fraction (the draws that
 * dominate the estimator's variance).
 */
inline MarginalLikelihood harmonic_mean_log_ml(std::span<const double> log_liks, double trim = 0.1,
                                               double ess_floor = 20.0) {
  if (log_liks.empty()) throw Error(ErrorCode::insufficient_samples, "no log-likelihoods");
  std::vector<double> v(log_liks.begin(), log_liks.end());
  std::sort(v.begin(), v.end());
  const auto drop = static_cast<std::size_t>(std::floor(trim * static_cast<double>(v.size())));
  v.erase(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(std::min(drop, v.size() - 1)));
  std::vector<double> neg(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) neg[i] = -v[i];
  const double lse = log_sum_exp(neg);
  MarginalLikelihood ml;
  ml.method = "harmonic_mean";
  ml.used = v.size();
  ml.log_value = -(lse - std::log(static_cast<double>(v.size())));
  double sw = 0.0, sw2 = 0.0;
  for (double x : neg) {
    const double w = std::exp(x - lse);
    sw += w;
    sw2 += w * w;
  }
  ml.ess = sw * sw / sw2;
  ml.unstable = ml.ess < ess_floor;
  return ml;
}

inline MarginalLikelihood harmonic_mean_log_ml(const PosteriorSampleSet& s, double trim = 0.1,
                                               double ess_floor = 20.0) {
  std::vector<double> ll;
  for (const auto& d : s.draws) ll.push_back(d.log_lik);
  return harmonic_mean_log_ml(ll, trim, ess_floor);
}

/*
 * Bridge-sampling estimate (iterative Meng-Wong) with a multivariate normal
 * proposal matched to the posterior draws over the coordinates that vary.
 * Not available with variable selection (indicator masking puts point
 * masses on the coefficients).
 */
template <LogTarget Target>
MarginalLikelihood bridge_log_ml(const PosteriorSampleSet& s, const Target& target,
                                 std::uint64_t seed, double ess_floor = 20.0) {
  if (s.selection()) {
    throw Error(ErrorCode::config, "bridge sampling requires variable selection to be off");
  }
  const std::size_t n1 = s.draws.size();
  if (n1 < 10) throw Error(ErrorCode::insufficient_samples, "bridge sampling needs >= 10 draws");
  const std::size_t dim = s.draws.front().theta.size();
  std::vector<std::size_t> free;
  for (std::size_t j = 0; j < dim; ++j) {
    const auto t = s.trace(j);
    if (variance(t) > 0.0) free.push_back(j);
  }
  const auto d = static_cast<Eigen::Index>(free.size());
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n1), d);
  for (std::size_t i = 0; i < n1; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) {
      x(static_cast<Eigen::Index>(i), k) = s.draws[i].theta[free[static_cast<std::size_t>(k)]];
    }
  }
  const Eigen::VectorXd mu = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mu.transpose();
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n1 - 1);
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  for (double jitter = 1e-12; llt.info() != Eigen::Success && jitter < 1.0; jitter *= 10) {
    cov.diagonal().array() += jitter * (cov.diagonal().mean() + 1e-300);
    llt.compute(cov);
  }
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::insufficient_samples, "posterior covariance is not positive definite");
  }
  const Eigen::MatrixXd chol = llt.matrixL();
  const double log_det = chol.diagonal().array().log().sum();
  const double norm_const = 0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) + log_det;
  auto log_g = [&](const Eigen::VectorXd& v) {
    const Eigen::VectorXd z = chol.triangularView<Eigen::Lower>().solve(v - mu);
    return -0.5 * z.squaredNorm() - norm_const;
  };

  std::vector<double> l1(n1), l2(n1);
  for (std::size_t i = 0; i < n1; ++i) {
    l1[i] = s.draws[i].log_lik - log_g(x.row(static_cast<Eigen::Index>(i)).transpose());
  }
  RandomSource rng(seed);
  std::vector<double> full = s.draws.front().theta;
  Eigen::VectorXd z(d);
  for (std::size_t i = 0; i < n1; ++i) {
    for (Eigen::Index k = 0; k < d; ++k) z(k) = rng.normal();
    const Eigen::VectorXd v = mu + chol * z;
    for (Eigen::Index k = 0; k < d; ++k) full[free[static_cast<std::size_t>(k)]] = v(k);
    const double ll = target(full);
    l2[i] = std::isfinite(ll) ? ll - log_g(v) : -std::numeric_limits<double>::infinity();
  }

  const double shift = quantile(l1, 0.5);
  const double s1 = 0.5, s2 = 0.5;
  std::vector<double> e1(n1), e2(n1);
  for (std::size_t i = 0; i < n1; ++i) {
    e1[i] = std::exp(l1[i] - shift);
    e2[i] = std::exp(l2[i] - shift);
  }
  double r = 1.0;
  for (int iter = 0; iter < 10000; ++iter) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < n1; ++i) {
      num += e2[i] / (s1 * e2[i] + s2 * r);
      den += 1.0 / (s1 * e1[i] + s2 * r);
    }
    const double next = num / den;
    const bool done = std::abs(std::log(next) - std::log(r)) < 1e-10;
    r = next;
    if (done) break;
  }
  MarginalLikelihood ml;
  ml.method = "bridge";
  ml.used = n1;
  ml.log_value = std::log(r) + shift;
  double sw = 0.0, sw2 = 0.0;
  for (double w : e2) {
    sw += w;
    sw2 += w * w;
  }
  ml.ess = sw2 > 0.0 ? sw * sw / sw2 : 0.0;
  ml.unstable = ml.ess < ess_floor || !std::isfinite(ml.log_value);
  return ml;
}

struct BayesFactor {
  double beta21 = 0.0;
  MarginalLikelihood model1;
  MarginalLikelihood model2;
  std::string category;
};

/// Verbal grade of 2 ln B21.
inline std::string bayes_category(double beta21) {
  if (beta21 < 0.0) return "negative";
  if (beta21 < 2.0) return "not worth more than a bare mention";
  if (beta21 < 5.0) return "positive";
  if (beta21 < 10.0) return "strong";
  return "very strong";
}

inline BayesFactor bayes_log_factor(const MarginalLikelihood& m1, const MarginalLikelihood& m2) {
  BayesFactor b;
  b.model1 = m1;
  b.model2 = m2;
  b.beta21 = 2.0 * (m2.log_value - m1.log_value);
  b.category = bayes_category(b.beta21);
  return b;
}

struct DicResult {
  double dic = 0.0;
  double mean_deviance = 0.0;
  double plug_in_deviance = 0.0;
  double p_d = 0.0;
  bool median_fallback = false;
};

/// DIC = mean deviance + p_D, p_D = mean deviance - deviance at the posterior
/// mean (posterior median when the mean is not a valid parameter).
template <LogTarget Target>
DicResult dic(const PosteriorSampleSet& s, const Target& target) {
  if (s.draws.empty()) throw Error(ErrorCode::insufficient_samples, "no posterior draws");
  const std::size_t dim = s.draws.front().theta.size();
  std::vector<std::vector<double>> eff;
  double dbar = 0.0;
  for (std::size_t k = 0; k < s.draws.size(); ++k) {
    eff.push_back(s.effective(k));
    dbar += -2.0 * s.draws[k].log_lik;
  }
  dbar /= static_cast<double>(s.draws.size());
  std::vector<double> center(dim, 0.0);
  for (const auto& e : eff) {
    for (std::size_t j = 0; j < dim; ++j) center[j] += e[j];
  }
  for (auto& v : center) v /= static_cast<double>(eff.size());
  DicResult r;
  double ll = target(center);
  if (!std::isfinite(ll)) {
    r.median_fallback = true;
    for (std::size_t j = 0; j < dim; ++j) {
      std::vector<double> col;
      for (const auto& e : eff) col.push_back(e[j]);
      center[j] = quantile(col, 0.5);
    }
    ll = target(center);
    if (!std::isfinite(ll)) {
      throw Error(ErrorCode::constraint_violation,
                  "neither posterior mean nor median is a valid parameter");
    }
  }
  r.mean_deviance = dbar;
  r.plug_in_deviance = -2.0 * ll;
  r.p_d = dbar - r.plug_in_deviance;
  r.dic = dbar + r.p_d;
  return r;
}

// ---------------------------------------------------------------------------
// Cross-validation

struct MonthSplit {
  int month = 0;  // month_key
  std::size_t rows = 0;
  std::size_t train = 0;
  std::size_t validate = 0;
  std::size_t validate_exceedances = 0;
  bool skipped = false;
  std::string note;
};

struct CrossValidationSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validate;
  std::vector<MonthSplit> months;
};

/*
 * Per calendar month, the first floor(fraction * rows) rows train and the rest
 * validate. Months without rows, or whose validation part has fewer than
 * `min_exceedances` exceedances, are skipped.
 */
inline CrossValidationSplit monthly_split(const Design& d, double train_fraction = 0.75,
                                          std::size_t min_exceedances = 1) {
  CrossValidationSplit out;
  if (d.rows() == 0) return out;
  std::map<int, std::vector<std::size_t>> by_month;
  for (std::size_t i = 0; i < d.rows(); ++i) by_month[month_key(d.timestamps[i])].push_back(i);
  const int first = by_month.begin()->first;
  const int last = by_month.rbegin()->first;
  for (int m = first; m <= last; ++m) {
    MonthSplit ms;
    ms.month = m;
    const auto it = by_month.find(m);
    if (it == by_month.end()) {
      ms.skipped = true;
      ms.note = "no rows";
      out.months.push_back(ms);
      continue;
    }
    const auto& rows = it->second;
    ms.rows = rows.size();
    ms.train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(rows.size())));
    ms.validate = rows.size() - ms.train;
    for (std::size_t k = ms.train; k < rows.size(); ++k) {
      ms.validate_exceedances += d.exceeds(rows[k]) ? 1 : 0;
    }
    if (ms.validate_exceedances < min_exceedances) {
      ms.skipped = true;
      ms.note = "too few validation exceedances";
    } else {
      out.train.insert(out.train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(ms.train));
      out.validate.insert(out.validate.end(), rows.begin() + static_cast<std::ptrdiff_t>(ms.train), rows.end());
    }
    out.months.push_back(ms);
  }
  return out;
}

// ---------------------------------------------------------------------------
// QQ plot data

struct QqPoint {
  double observed = 0.0;
  double simulated = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

/*
 * Sorted observed excesses against sorted excesses simulated at the same
 * covariates, with 2.5%/97.5% envelopes over replicates (each replicate uses
 * one posterior draw).
 */
template <UniformSource R>
std::vector<QqPoint> qq_envelope(const Design& d, const PosteriorSampleSet& s, R& rng,
                                 std::size_t replicates = 200) {
  std::vector<std::size_t> rows;
  std::vector<double> observed;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    if (d.exceeds(i)) {
      rows.push_back(i);
      observed.push_back(d.response[i] - d.threshold);
    }
  }
  if (rows.empty() || s.draws.empty()) return {};
  std::sort(observed.begin(), observed.end());
  std::vector<std::vector<double>> sims(replicates);
  for (std::size_t r = 0; r < replicates; ++r) {
    const Theta th = s.effective_theta((r * s.draws.size()) / replicates % s.draws.size());
    for (std::size_t i : rows) {
      const auto local = try_link(th, d.threshold, d.row(i));
      if (!local) throw Error(ErrorCode::constraint_violation, "posterior draw invalid");
      sims[r].push_back(gpd_sample(rng, GpdParams(local->sigma, local->xi)));
    }
    std::sort(sims[r].begin(), sims[r].end());
  }
  std::vector<QqPoint> out(rows.size());
  std::vector<double> col(replicates);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    for (std::size_t r = 0; r < replicates; ++r) col[r] = sims[r][k];
    out[k] = {observed[k], quantile(col, 0.5), quantile(col, 0.025), quantile(col, 0.975)};
  }
  return out;
}

/// Coordinatewise posterior median of the effective parameters.
inline Theta posterior_median_theta(const PosteriorSampleSet& s) {
  if (s.draws.empty()) throw Error(ErrorCode::insufficient_samples, "no posterior draws");
  const std::size_t dim = s.draws.front().theta.size();
  std::vector<double> med(dim);
  for (std::size_t j = 0; j < dim; ++j) med[j] = quantile(s.trace(j), 0.5);
  return Theta(s.kind, s.width, med);
}

}  // namespace tspot
