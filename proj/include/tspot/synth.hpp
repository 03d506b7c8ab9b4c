#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "tspot/error.hpp"
#include "tspot/features.hpp"
#include "tspot/gpd.hpp"
#include "tspot/model.hpp"
#include "tspot/random.hpp"
#include "tspot/records.hpp"

namespace tspot {

/// One POT response at a covariate vector: u + GPD with probability rho,
/// otherwise `below(rng)`.
template <UniformSource R, class Below>
double draw_response(const LocalGpd& local, double u, R& rng, Below&& below) {
  if (local.rho > rng.uniform()) return u + gpd_sample(rng, GpdParams(local.sigma, local.xi));
  return below(rng);
}

/*
 * Design whose m covariates take values on an evenly spaced grid of `levels`
 * points in [-1, 1], drawn independently per row. Few distinct rows keep the
 * likelihood cheap on large n.
 */
inline Design discrete_covariate_design(RandomSource& rng, std::size_t n, std::size_t m,
                                        std::size_t levels, double u) {
  if (levels < 2) throw Error(ErrorCode::invalid_argument, "need at least two levels");
  Design d;
  d.width = m + 1;
  d.threshold = u;
  for (std::size_t j = 1; j <= m; ++j) d.covariate_names.push_back("x" + std::to_string(j));
  std::vector<double> row(d.width, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      const auto k = rng.index(levels);
      row[j] = -1.0 + 2.0 * static_cast<double>(k) / static_cast<double>(levels - 1);
    }
    d.push_row(row, 0.0, static_cast<Timestamp>(i) * kGridSeconds, i);
  }
  return d;
}

/// Replaces every response with a draw from the model; non-exceedances are
/// uniform on [0, u].
inline void simulate_responses(Design& d, const Theta& theta, RandomSource& rng) {
  const double u = d.threshold;
  for (std::size_t i = 0; i < d.rows(); ++i) {
    const auto local = try_link(theta, u, d.row(i));
    if (!local) {
      throw Error(ErrorCode::constraint_violation,
                  "true parameters invalid at row " + std::to_string(i));
    }
    d.response[i] = draw_response(*local, u, rng, [&](RandomSource& r) { return u * r.uniform(); });
  }
}

// ---------------------------------------------------------------------------
// Synthetic observation records

/*
 * True parameters for record synthesis. Coefficients are keyed by block
 * prefix ("s", "k", "r" or "a", "b", "g", "r") and then by covariate name
 * ("intercept" for the constant); covariates not listed have coefficient 0.
 * Names refer to raw (unstandardized) covariate values.
 */
struct SynthSpec {
  std::size_t records = 2000;
  std::string start = "2008-01-01T00:00:00";
  Pollutant target = Pollutant::no;
  ModelKind model = ModelKind::model2;
  double threshold = 50.0;
  /// Default truth: moderate Model II tail, rate driven by traffic, wind and the first lag.
  std::map<std::string, std::map<std::string, double>> coefficients{
      {"a", {{"intercept", 12.0}, {"tf_ldv", 0.01}}},
      {"b", {{"intercept", 0.1}}},
      {"g", {{"daily_cos1", 0.2}}},
      {"r", {{"intercept", -3.0}, {"tf_ldv", 0.005}, {"ws", -0.3}, {"lag1_no", 0.02}}}};
  FeatureSpec features;
  /// Fraction of non-timestamp cells left empty.
  double missing_rate = 0.0;
  std::uint64_t seed = 1;

  friend bool operator==(const SynthSpec&, const SynthSpec&) = default;
};

/// Raw-scale coefficient vector (intercept first) of one block.
inline std::vector<double> synth_block(const SynthSpec& spec, const std::string& prefix,
                                       const std::vector<std::string>& names) {
  std::vector<double> v(names.size() + 1, 0.0);
  const auto it = spec.coefficients.find(prefix);
  if (it == spec.coefficients.end()) return v;
  for (const auto& [name, value] : it->second) {
    if (name == "intercept") {
      v[0] = value;
      continue;
    }
    const auto pos = std::find(names.begin(), names.end(), name);
    if (pos == names.end()) {
      throw Error(ErrorCode::config, "synth coefficient for unknown covariate '" + name + "'");
    }
    v[static_cast<std::size_t>(pos - names.begin()) + 1] = value;
  }
  return v;
}

inline Theta synth_theta(const SynthSpec& spec, const std::vector<std::string>& names) {
  for (const auto& [prefix, _] : spec.coefficients) {
    const auto allowed = block_prefixes(spec.model);
    if (std::find(allowed.begin(), allowed.end(), prefix) == allowed.end()) {
      throw Error(ErrorCode::config, "coefficient block '" + prefix + "' does not belong to " +
                                         to_string(spec.model));
    }
  }
  Theta t(spec.model, names.size() + 1);
  const auto prefixes = block_prefixes(spec.model);
  for (std::size_t b = 0; b < prefixes.size(); ++b) {
    const auto v = synth_block(spec, prefixes[b], names);
    std::copy(v.begin(), v.end(), t.block(b).begin());
  }
  return t;
}

/*
 * Seeded synthetic records on the 15-min grid. Traffic, weather and the
 * non-target pollutants follow simple daily and yearly cycles with noise; the
 * target pollutant is drawn sequentially from the POT model so that its lags
 * feed later rows. Rows without a full lag window get a below-threshold value.
 */
inline std::vector<ObservationRecord> synthesize_records(const SynthSpec& spec) {
  const auto start = parse_timestamp(spec.start);
  if (!start) throw Error(ErrorCode::config, "bad synth start timestamp '" + spec.start + "'");
  validate(spec.features);
  const auto names = covariate_names(spec.features);
  const Theta theta = synth_theta(spec, names);
  RandomSource rng(spec.seed);
  const double u = spec.threshold;

  std::vector<ObservationRecord> recs(spec.records);
  double ar_no = 0.0, ar_no2 = 0.0, ar_o3 = 0.0;
  for (std::size_t i = 0; i < spec.records; ++i) {
    auto& r = recs[i];
    r.timestamp = *start + static_cast<Timestamp>(i) * kGridSeconds;
    const CivilTime ct = to_civil(r.timestamp);
    const double hour = ct.hour + ct.minute / 60.0;
    const double day_phase = 2.0 * std::numbers::pi * hour / 24.0;
    const double year_phase = 2.0 * std::numbers::pi * static_cast<double>(r.timestamp % kYearSeconds) /
                              static_cast<double>(kYearSeconds);
    const double rush = std::exp(-std::pow(hour - 8.0, 2) / 4.0) + std::exp(-std::pow(hour - 17.5, 2) / 4.0);
    const double base_flow = 60.0 + 260.0 * rush + 80.0 * (hour > 6 && hour < 22 ? 1.0 : 0.0);
    r.tf_ldv = std::round(std::max(0.0, base_flow * (0.85 + 0.3 * rng.uniform())));
    r.tf_hgv = std::round(std::max(0.0, 0.1 * *r.tf_ldv * (0.5 + rng.uniform())));
    const double congestion = rush > 0.8 && rng.uniform() < 0.3 ? 25.0 : 0.0;
    r.ts_ldv = std::max(5.0, 55.0 - congestion + 6.0 * rng.normal());
    r.ts_hgv = std::max(5.0, *r.ts_ldv - 5.0 + 3.0 * rng.normal());
    r.temp = 10.0 - 7.0 * std::cos(year_phase) - 3.0 * std::cos(day_phase) + 1.5 * rng.normal();
    r.rh = std::clamp(75.0 + 12.0 * std::cos(day_phase) + 8.0 * rng.normal(), 5.0, 100.0);
    r.sr = std::max(0.0, 400.0 * -std::cos(day_phase) * (1.2 - 0.5 * std::cos(year_phase))) *
           (0.6 + 0.4 * rng.uniform());
    r.ws = std::max(0.0, 3.0 + 1.5 * rng.normal());
    r.wd = std::fmod(360.0 * rng.uniform(), 360.0);
    ar_no = 0.8 * ar_no + rng.normal();
    ar_no2 = 0.8 * ar_no2 + rng.normal();
    ar_o3 = 0.8 * ar_o3 + rng.normal();
    r.no = std::max(0.0, 0.4 * u * (1.0 + 0.3 * ar_no));
    r.no2 = std::max(0.0, 0.4 * u * (1.0 + 0.3 * ar_no2));
    r.o3 = std::max(0.0, 0.4 * u * (1.0 + 0.3 * ar_o3));
  }

  const auto slot_of = grid_slots(recs);
  const Timestamp origin = recs.empty() ? 0 : recs.front().timestamp;
  std::vector<double> c(names.size() + 1, 1.0);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    auto& y = recs[i].concentration(spec.target);
    const auto cov = record_covariates(recs, i, spec.features, slot_of, origin);
    if (!cov) {
      y = u * rng.uniform();
      continue;
    }
    std::copy(cov->begin(), cov->end(), c.begin() + 1);
    const auto local = try_link(theta, u, c);
    if (!local) {
      throw Error(ErrorCode::constraint_violation,
                  "synth parameters invalid at record " + std::to_string(i));
    }
    y = draw_response(*local, u, rng, [&](RandomSource& g) { return u * g.uniform(); });
  }

  if (spec.missing_rate > 0.0) {
    for (auto& r : recs) {
      for (std::size_t col = 1; col < kCsvColumns.size(); ++col) {
        if (rng.uniform() < spec.missing_rate) detail::field_slot(r, col)->reset();
      }
    }
  }
  return recs;
}

}  // namespace tspot
