#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tspot/error.hpp"
#include "tspot/records.hpp"

namespace tspot {

// ---------------------------------------------------------------------------
// Traffic regime

enum class TrafficRegime { quiet, free, busy, congested };

inline const char* to_string(TrafficRegime r) {
  switch (r) {
    case TrafficRegime::quiet: return "quiet";
    case TrafficRegime::free: return "free";
    case TrafficRegime::busy: return "busy";
    case TrafficRegime::congested: return "congested";
  }
  return "?";
}

/// Four-level regime from total flow (vehicles / 15 min) and mean speed (kph).
inline TrafficRegime classify_traffic_regime(double tf_total, double ts_avg) {
  if (ts_avg < 30.0) return TrafficRegime::congested;
  if (tf_total <= 200.0) return TrafficRegime::quiet;
  if (tf_total <= 300.0) return TrafficRegime::free;
  return TrafficRegime::busy;
}

inline std::optional<TrafficRegime> classify_traffic_regime(
    std::optional<double> tf_total, std::optional<double> ts_avg) {
  if (!tf_total || !ts_avg) return std::nullopt;
  return classify_traffic_regime(*tf_total, *ts_avg);
}

inline std::optional<double> total_flow(const ObservationRecord& r) {
  if (!r.tf_ldv || !r.tf_hgv) return std::nullopt;
  return *r.tf_ldv + *r.tf_hgv;
}

/// Flow-weighted mean speed over both vehicle classes; plain mean when the
/// road is empty.
inline std::optional<double> average_speed(const ObservationRecord& r) {
  if (!r.tf_ldv || !r.tf_hgv || !r.ts_ldv || !r.ts_hgv) return std::nullopt;
  const double total = *r.tf_ldv + *r.tf_hgv;
  if (total <= 0.0) return 0.5 * (*r.ts_ldv + *r.ts_hgv);
  return (*r.tf_ldv * *r.ts_ldv + *r.tf_hgv * *r.ts_hgv) / total;
}

// ---------------------------------------------------------------------------
// Feature specification

struct FourierOrders {
  int daily = 3;
  int weekly = 2;
  int yearly = 2;
  friend bool operator==(const FourierOrders&, const FourierOrders&) = default;
};

inline constexpr Timestamp kWeekSeconds = 7 * kDaySeconds;
/// Mean calendar year; a whole number of seconds, so the yearly harmonics are
/// exactly periodic.
inline constexpr Timestamp kYearSeconds = 31'557'600;
/// 1970-01-05 was a Monday; weekly phase 0 is Monday 00:00.
inline constexpr Timestamp kWeekOrigin = 4 * kDaySeconds;

inline std::vector<std::string> default_meteorological_terms() {
  return {"rh",         "sr",         "ws",      "temp",    "ws*rh",
          "ws*sr",      "ws*temp",    "ws*wd_sin", "ws*wd_cos", "ws*wd_sin2",
          "ws*wd_cos2", "rh^2",       "sr^2",    "temp^2",  "ws^2"};
}

struct FeatureSpec {
  FourierOrders fourier;
  /// Harmonics of wind direction counted with the composite block.
  int wind_direction_order = 2;
  int lag_count = 4;
  std::vector<Pollutant> lagged_pollutants{kAllPollutants.begin(),
                                           kAllPollutants.end()};
  bool include_traffic = true;
  bool include_traffic_regime = true;
  /// Terms over rh, sr, ws, temp, wd_sin[k], wd_cos[k]: `v`, `v*w` or `v^2`.
  std::vector<std::string> meteorological_terms = default_meteorological_terms();
  /// When set, the assembled covariate count must equal this value.
  std::optional<std::size_t> expected_covariates = 52;

  friend bool operator==(const FeatureSpec&, const FeatureSpec&) = default;
};

/// Cycle-position harmonics: sin/cos(2 pi k phase) for each enabled period.
inline std::vector<double> fourier_features(Timestamp ts, const FeatureSpec& spec) {
  std::vector<double> out;
  auto emit = [&](Timestamp period, Timestamp origin, int order) {
    Timestamp r = (ts - origin) % period;
    if (r < 0) r += period;
    const double phase = static_cast<double>(r) / static_cast<double>(period);
    for (int k = 1; k <= order; ++k) {
      const double angle = 2.0 * std::numbers::pi * k * phase;
      out.push_back(std::sin(angle));
      out.push_back(std::cos(angle));
    }
  };
  emit(kDaySeconds, 0, spec.fourier.daily);
  emit(kWeekSeconds, kWeekOrigin, spec.fourier.weekly);
  emit(kYearSeconds, 0, spec.fourier.yearly);
  return out;
}

inline std::vector<std::string> fourier_names(const FeatureSpec& spec) {
  std::vector<std::string> names;
  auto emit = [&](const char* cycle, int order) {
    for (int k = 1; k <= order; ++k) {
      names.push_back(std::string(cycle) + "_sin" + std::to_string(k));
      names.push_back(std::string(cycle) + "_cos" + std::to_string(k));
    }
  };
  emit("daily", spec.fourier.daily);
  emit("weekly", spec.fourier.weekly);
  emit("yearly", spec.fourier.yearly);
  return names;
}

namespace detail {

inline std::string harmonic_name(const char* base, int k) {
  return k == 1 ? std::string(base) : std::string(base) + std::to_string(k);
}

/// Named meteorological base values of one record, or nullopt when missing.
inline std::optional<double> met_value(const ObservationRecord& r,
                                       std::string_view name) {
  if (name == "rh") return r.rh;
  if (name == "sr") return r.sr;
  if (name == "ws") return r.ws;
  if (name == "temp") return r.temp;
  for (const char* base : {"wd_sin", "wd_cos"}) {
    const std::string_view b(base);
    if (name.substr(0, b.size()) != b) continue;
    int k = 1;
    if (name.size() > b.size()) {
      const auto rest = name.substr(b.size());
      auto [p, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), k);
      if (ec != std::errc{} || p != rest.data() + rest.size() || k < 1) {
        throw Error(ErrorCode::config,
                    "unknown meteorological variable '" + std::string(name) + "'");
      }
    }
    if (!r.wd) return std::nullopt;
    const double angle = k * *r.wd * std::numbers::pi / 180.0;
    return b == "wd_sin" ? std::sin(angle) : std::cos(angle);
  }
  throw Error(ErrorCode::config,
              "unknown meteorological variable '" + std::string(name) + "'");
}

}  // namespace detail

/// Evaluates one meteorological term (`v`, `v*w`, `v^2`) on a record.
inline std::optional<double> meteorological_term(const ObservationRecord& r,
                                                 std::string_view term) {
  if (const auto star = term.find('*'); star != std::string_view::npos) {
    const auto a = detail::met_value(r, term.substr(0, star));
    const auto b = detail::met_value(r, term.substr(star + 1));
    if (!a || !b) return std::nullopt;
    return *a * *b;
  }
  if (term.size() > 2 && term.substr(term.size() - 2) == "^2") {
    const auto a = detail::met_value(r, term.substr(0, term.size() - 2));
    if (!a) return std::nullopt;
    return *a * *a;
  }
  return detail::met_value(r, term);
}

inline std::string lag_name(Pollutant p, int lag) {
  return "lag" + std::to_string(lag) + "_" + to_string(p);
}

/// Covariate names in column order (c_tilde[1..m]): traffic, composite,
/// meteorological, lagged concentrations.
inline std::vector<std::string> covariate_names(const FeatureSpec& spec) {
  std::vector<std::string> names;
  if (spec.include_traffic) {
    for (const char* n : {"tf_ldv", "tf_hgv", "ts_ldv", "ts_hgv"}) names.emplace_back(n);
  }
  if (spec.include_traffic_regime) {
    for (const char* n : {"regime_free", "regime_busy", "regime_congested"}) {
      names.emplace_back(n);
    }
  }
  for (auto& n : fourier_names(spec)) names.push_back(std::move(n));
  for (int k = 1; k <= spec.wind_direction_order; ++k) {
    names.push_back(detail::harmonic_name("wd_sin", k));
    names.push_back(detail::harmonic_name("wd_cos", k));
  }
  for (const auto& t : spec.meteorological_terms) names.push_back(t);
  for (Pollutant p : spec.lagged_pollutants) {
    for (int j = 1; j <= spec.lag_count; ++j) names.push_back(lag_name(p, j));
  }
  return names;
}

inline std::size_t composite_covariate_count(const FeatureSpec& spec) {
  return fourier_names(spec).size() +
         2 * static_cast<std::size_t>(std::max(spec.wind_direction_order, 0));
}

inline void validate(const FeatureSpec& spec) {
  if (spec.fourier.daily < 0 || spec.fourier.weekly < 0 || spec.fourier.yearly < 0 ||
      spec.wind_direction_order < 0 || spec.lag_count < 0) {
    throw Error(ErrorCode::config, "feature orders and lag count must be >= 0");
  }
  ObservationRecord probe;
  probe.rh = probe.sr = probe.ws = probe.temp = probe.wd = 1.0;
  for (const auto& t : spec.meteorological_terms) {
    if (!meteorological_term(probe, t)) {
      throw Error(ErrorCode::config, "bad meteorological term '" + t + "'");
    }
  }
  const auto names = covariate_names(spec);
  if (spec.expected_covariates && *spec.expected_covariates != names.size()) {
    throw Error(ErrorCode::covariate_count,
                "feature spec yields " + std::to_string(names.size()) +
                    " covariates, expected " +
                    std::to_string(*spec.expected_covariates));
  }
}

// ---------------------------------------------------------------------------
// Design matrix

/// Read-only view of one design row.
struct DesignRow {
  Timestamp timestamp;
  double response;
  std::span<const double> c_tilde;
  bool exceeds;
  std::optional<double> exceedance;
};

/*
 * Extended covariate rows (leading 1) for one target pollutant and threshold,
 * stored row-major. `record_index` maps each row back to its source record.
 */
struct Design {
  std::vector<std::string> covariate_names;
  std::size_t width = 1;
  std::vector<double> x;
  std::vector<double> response;
  std::vector<Timestamp> timestamps;
  std::vector<std::size_t> record_index;
  double threshold = 0.0;

  std::size_t rows() const noexcept { return response.size(); }
  std::size_t covariates() const noexcept { return width - 1; }

  std::span<const double> row(std::size_t i) const noexcept {
    return {x.data() + i * width, width};
  }
  std::span<double> row(std::size_t i) noexcept {
    return {x.data() + i * width, width};
  }
  bool exceeds(std::size_t i) const noexcept { return response[i] > threshold; }

  DesignRow at(std::size_t i) const {
    const bool e = exceeds(i);
    return {timestamps[i], response[i], row(i), e,
            e ? std::optional<double>(response[i] - threshold) : std::nullopt};
  }

  std::size_t exceedance_count() const noexcept {
    std::size_t k = 0;
    for (std::size_t i = 0; i < rows(); ++i) k += exceeds(i) ? 1 : 0;
    return k;
  }

  void push_row(std::span<const double> c_tilde, double y, Timestamp ts,
                std::size_t source) {
    x.insert(x.end(), c_tilde.begin(), c_tilde.end());
    response.push_back(y);
    timestamps.push_back(ts);
    record_index.push_back(source);
  }

  /// Rows selected by index, same columns and threshold.
  Design subset(std::span<const std::size_t> indices) const {
    Design out;
    out.covariate_names = covariate_names;
    out.width = width;
    out.threshold = threshold;
    for (std::size_t i : indices) push_into(out, i);
    return out;
  }

  std::size_t column(std::string_view name) const {
    for (std::size_t j = 0; j < covariate_names.size(); ++j) {
      if (covariate_names[j] == name) return j + 1;
    }
    throw Error(ErrorCode::invalid_argument,
                "no covariate named '" + std::string(name) + "'");
  }

 private:
  void push_into(Design& out, std::size_t i) const {
    out.push_row(row(i), response[i], timestamps[i], record_index[i]);
  }
};

/// Covariate values (without the intercept) for record `i`, or nullopt when
/// anything required is missing, including lags that fall in a grid gap.
/// `slot_of` maps a grid index to the record index (or -1).
inline std::optional<std::vector<double>> record_covariates(
    const std::vector<ObservationRecord>& records, std::size_t i,
    const FeatureSpec& spec, const std::vector<std::ptrdiff_t>& slot_of,
    Timestamp origin) {
  const ObservationRecord& r = records[i];
  std::vector<double> c;
  if (spec.include_traffic) {
    for (const auto* f : {&r.tf_ldv, &r.tf_hgv, &r.ts_ldv, &r.ts_hgv}) {
      if (!*f) return std::nullopt;
      c.push_back(**f);
    }
  }
  if (spec.include_traffic_regime) {
    const auto regime = classify_traffic_regime(total_flow(r), average_speed(r));
    if (!regime) return std::nullopt;
    c.push_back(*regime == TrafficRegime::free ? 1.0 : 0.0);
    c.push_back(*regime == TrafficRegime::busy ? 1.0 : 0.0);
    c.push_back(*regime == TrafficRegime::congested ? 1.0 : 0.0);
  }
  for (double v : fourier_features(r.timestamp, spec)) c.push_back(v);
  for (int k = 1; k <= spec.wind_direction_order; ++k) {
    if (!r.wd) return std::nullopt;
    const double angle = k * *r.wd * std::numbers::pi / 180.0;
    c.push_back(std::sin(angle));
    c.push_back(std::cos(angle));
  }
  for (const auto& t : spec.meteorological_terms) {
    const auto v = meteorological_term(r, t);
    if (!v) return std::nullopt;
    c.push_back(*v);
  }
  const Timestamp slot = (r.timestamp - origin) / kGridSeconds;
  for (Pollutant p : spec.lagged_pollutants) {
    for (int j = 1; j <= spec.lag_count; ++j) {
      const Timestamp s = slot - j;
      if (s < 0) return std::nullopt;
      const std::ptrdiff_t idx = slot_of[static_cast<std::size_t>(s)];
      if (idx < 0) return std::nullopt;
      const auto& v = records[static_cast<std::size_t>(idx)].concentration(p);
      if (!v) return std::nullopt;
      c.push_back(*v);
    }
  }
  return c;
}

inline std::vector<std::ptrdiff_t> grid_slots(
    const std::vector<ObservationRecord>& records) {
  if (records.empty()) return {};
  const Timestamp origin = records.front().timestamp;
  const auto span =
      static_cast<std::size_t>((records.back().timestamp - origin) / kGridSeconds) + 1;
  std::vector<std::ptrdiff_t> slot_of(span, -1);
  for (std::size_t i = 0; i < records.size(); ++i) {
    slot_of[static_cast<std::size_t>((records[i].timestamp - origin) / kGridSeconds)] =
        static_cast<std::ptrdiff_t>(i);
  }
  return slot_of;
}

/*
 * One row per record whose response and every covariate (lags included) are
 * present. Rows keep raw covariate scales; see Standardizer.
 */
inline Design build_design_matrix(const std::vector<ObservationRecord>& records,
                                  Pollutant target, double threshold,
                                  const FeatureSpec& spec) {
  validate(spec);
  if (!std::isfinite(threshold)) {
    throw Error(ErrorCode::invalid_argument, "threshold must be finite");
  }
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].timestamp <= records[i - 1].timestamp) {
      throw Error(ErrorCode::invalid_argument, "records are not time ordered");
    }
  }
  Design d;
  d.covariate_names = covariate_names(spec);
  d.width = d.covariate_names.size() + 1;
  d.threshold = threshold;
  if (records.empty()) throw Error(ErrorCode::empty_design, "no records");
  const auto slot_of = grid_slots(records);
  const Timestamp origin = records.front().timestamp;
  std::vector<double> row(d.width);
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& y = records[i].concentration(target);
    if (!y) continue;
    const auto c = record_covariates(records, i, spec, slot_of, origin);
    if (!c) continue;
    row[0] = 1.0;
    std::copy(c->begin(), c->end(), row.begin() + 1);
    d.push_row(row, *y, records[i].timestamp, i);
  }
  if (d.rows() == 0) {
    throw Error(ErrorCode::empty_design,
                "every record was dropped for missing response or covariates");
  }
  return d;
}

/// Order statistic X_(ceil(q n)) of the sample; always an observed value.
inline double empirical_quantile_threshold(std::span<const double> values, double q) {
  if (values.empty()) throw Error(ErrorCode::invalid_argument, "empty sample");
  if (!(q > 0.0 && q < 1.0)) {
    throw Error(ErrorCode::invalid_argument, "quantile level must be in (0,1)");
  }
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double qn = q * static_cast<double>(sorted.size());
  double k = std::ceil(qn);
  // q*n that should be an integer may land a few ulps above it.
  if (k - qn > 1.0 - 1e-9) k -= 1.0;
  const auto idx = static_cast<std::size_t>(std::max(k, 1.0)) - 1;
  return sorted[std::min(idx, sorted.size() - 1)];
}

/// All present values of one pollutant, in record order.
inline std::vector<double> concentrations(const std::vector<ObservationRecord>& records,
                                          Pollutant p) {
  std::vector<double> out;
  for (const auto& r : records) {
    if (const auto& v = r.concentration(p)) out.push_back(*v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Standardization

/*
 * Per-column centring and scaling of c_tilde[1..m]. The intercept column is
 * untouched. Constant columns are centred only.
 */
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer fit(const Design& d) {
    const std::size_t m = d.covariates();
    Standardizer s;
    s.mean.assign(m, 0.0);
    s.scale.assign(m, 1.0);
    const double n = static_cast<double>(d.rows());
    for (std::size_t j = 0; j < m; ++j) {
      double sum = 0.0;
      for (std::size_t i = 0; i < d.rows(); ++i) sum += d.row(i)[j + 1];
      const double mu = sum / n;
      double ss = 0.0;
      for (std::size_t i = 0; i < d.rows(); ++i) {
        const double e = d.row(i)[j + 1] - mu;
        ss += e * e;
      }
      const double sd = std::sqrt(ss / n);
      s.mean[j] = mu;
      s.scale[j] = (sd > 1e-12 * std::max(1.0, std::abs(mu))) ? sd : 1.0;
    }
    return s;
  }

  static Standardizer identity(std::size_t m) {
    return {std::vector<double>(m, 0.0), std::vector<double>(m, 1.0)};
  }

  double forward(std::size_t covariate, double raw) const {
    return (raw - mean[covariate]) / scale[covariate];
  }

  void apply(std::span<double> c_tilde) const {
    for (std::size_t j = 0; j < mean.size(); ++j) {
      c_tilde[j + 1] = forward(j, c_tilde[j + 1]);
    }
  }

  void apply(Design& d) const {
    if (d.covariates() != mean.size()) {
      throw Error(ErrorCode::invalid_argument, "standardizer width mismatch");
    }
    for (std::size_t i = 0; i < d.rows(); ++i) apply(d.row(i));
  }

  /// Coefficients of a linear predictor on standardized columns mapped to
  /// the raw covariate scale (same predictor value for every row).
  std::vector<double> to_raw(std::span<const double> coef) const {
    std::vector<double> raw(coef.begin(), coef.end());
    for (std::size_t j = 0; j < mean.size(); ++j) {
      raw[j + 1] = coef[j + 1] / scale[j];
      raw[0] -= raw[j + 1] * mean[j];
    }
    return raw;
  }

  friend bool operator==(const Standardizer&, const Standardizer&) = default;
};

/// Column positions in c_tilde of the target pollutant's lags 1..K (empty if
/// the target is not lagged).
inline std::vector<std::size_t> target_lag_columns(const Design& d, Pollutant target,
                                                   int lag_count) {
  std::vector<std::size_t> cols;
  for (int j = 1; j <= lag_count; ++j) {
    const auto name = lag_name(target, j);
    for (std::size_t k = 0; k < d.covariate_names.size(); ++k) {
      if (d.covariate_names[k] == name) cols.push_back(k + 1);
    }
  }
  return cols;
}

/// Calendar month key (year*12 + month-1) of a timestamp.
inline int month_key(Timestamp ts) {
  const CivilTime c = to_civil(ts);
  return c.year * 12 + static_cast<int>(c.month) - 1;
}

/// Daylight is 07:00-20:00 local clock time; the rest is night.
inline bool is_daylight(Timestamp ts) {
  const int h = to_civil(ts).hour;
  return h >= 7 && h < 20;
}

/// Identifies the daylight or night period a timestamp belongs to. A night
/// runs 20:00 to 07:00 and is keyed by the day it starts on.
inline std::int64_t period_key(Timestamp ts) {
  Timestamp day = ts >= 0 ? ts / kDaySeconds : -((-ts + kDaySeconds - 1) / kDaySeconds);
  const int h = to_civil(ts).hour;
  if (h >= 7 && h < 20) return day * 2;
  if (h < 7) day -= 1;
  return day * 2 + 1;
}

}  // namespace tspot
