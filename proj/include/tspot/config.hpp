#pragma once

#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "tspot/error.hpp"
#include "tspot/features.hpp"
#include "tspot/model.hpp"
#include "tspot/records.hpp"
#include "tspot/sampler.hpp"
#include "tspot/synth.hpp"

namespace tspot {

using Json = nlohmann::ordered_json;

struct ReturnLevelConfig {
  std::vector<double> horizons_years{5.0, 10.0};
  /// Per-observation probabilities, reported next to the horizons.
  std::vector<double> probabilities;
  std::size_t replicates = 20;
  /// Simulated length per replicate; 0 picks the smallest admissible length.
  std::size_t length = 0;
  /// Design rows at which conditional levels are reported.
  std::vector<std::size_t> conditional_rows;
  /// Limit simulated lag feedback to the observed response range.
  bool clamp_lags = true;

  friend bool operator==(const ReturnLevelConfig&, const ReturnLevelConfig&) = default;
};

struct ScenarioConfig {
  double reduction = 0.25;
  double flow_low = 0.7;
  double flow_high = 0.8;
  /// false draws non-exceedances from the baseline pool instead of the
  /// flow window.
  bool resample_lags = true;

  friend bool operator==(const ScenarioConfig&, const ScenarioConfig&) = default;
};

struct CompareConfig {
  std::string estimator = "harmonic_mean";  // or "bridge"
  std::string model1_dir;
  std::string model2_dir;

  friend bool operator==(const CompareConfig&, const CompareConfig&) = default;
};

struct CrossValidationConfig {
  double train_fraction = 0.75;
  std::size_t min_exceedances = 1;

  friend bool operator==(const CrossValidationConfig&, const CrossValidationConfig&) = default;
};

struct DiagnoseConfig {
  std::size_t qq_replicates = 200;

  friend bool operator==(const DiagnoseConfig&, const DiagnoseConfig&) = default;
};

struct RunConfig {
  std::string data_path = "data.csv";
  Pollutant target = Pollutant::no;
  std::optional<double> threshold_quantile = 0.90;
  std::optional<double> threshold;
  /// Centre and scale covariates before sampling; reports stay on raw scale.
  bool standardize = true;
  std::string output_dir = "out";
  FeatureSpec features;
  ChainConfig chain;
  ReturnLevelConfig return_levels;
  ScenarioConfig scenario;
  CompareConfig compare;
  CrossValidationConfig cross_validation;
  DiagnoseConfig diagnose;
  SynthSpec synth;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;

  void validate() const {
    if (threshold_quantile.has_value() == threshold.has_value()) {
      throw Error(ErrorCode::config, "set exactly one of threshold_quantile and threshold");
    }
    if (threshold_quantile && !(*threshold_quantile > 0.0 && *threshold_quantile < 1.0)) {
      throw Error(ErrorCode::config, "threshold_quantile must be in (0,1)");
    }
    chain.validate();
    tspot::validate(features);
    if (!(scenario.reduction >= 0.0 && scenario.reduction < 1.0)) {
      throw Error(ErrorCode::config, "scenario.reduction must be in [0,1)");
    }
    if (!(scenario.flow_low >= 0.0 && scenario.flow_low <= scenario.flow_high)) {
      throw Error(ErrorCode::config, "scenario flow window must satisfy 0 <= low <= high");
    }
    if (compare.estimator != "harmonic_mean" && compare.estimator != "bridge") {
      throw Error(ErrorCode::config, "compare.estimator must be harmonic_mean or bridge");
    }
    if (!(cross_validation.train_fraction > 0.0 && cross_validation.train_fraction < 1.0)) {
      throw Error(ErrorCode::config, "cross_validation.train_fraction must be in (0,1)");
    }
    if (return_levels.replicates == 0) {
      throw Error(ErrorCode::config, "return_levels.replicates must be >= 1");
    }
    for (double h : return_levels.horizons_years) {
      if (!(h > 0.0)) throw Error(ErrorCode::config, "horizons must be positive");
    }
    for (double p : return_levels.probabilities) {
      if (!(p > 0.0 && p < 1.0)) throw Error(ErrorCode::config, "probabilities must be in (0,1)");
    }
  }
};

// ---------------------------------------------------------------------------
// JSON mapping

namespace detail {

/// Rejects keys outside `allowed`, so typos do not silently fall back to
/// defaults.
inline void check_keys(const Json& j, const std::string& where, std::set<std::string> allowed) {
  if (!j.is_object()) throw Error(ErrorCode::config, where + " must be an object");
  for (const auto& [k, _] : j.items()) {
    if (!allowed.contains(k)) throw Error(ErrorCode::config, "unknown key '" + k + "' in " + where);
  }
}

template <class T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorCode::config, where + "." + key + " has the wrong type");
  }
}

inline std::vector<Pollutant> parse_pollutants(const Json& j, const std::string& where) {
  std::vector<Pollutant> out;
  if (!j.is_array()) throw Error(ErrorCode::config, where + " must be an array");
  for (const auto& v : j) {
    if (!v.is_string()) throw Error(ErrorCode::config, where + " entries must be strings");
    try {
      out.push_back(parse_pollutant(v.get<std::string>()));
    } catch (const Error& e) {
      throw Error(ErrorCode::config, e.what());
    }
  }
  return out;
}

inline std::string read_text(const std::string& path, ErrorCode code) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(code, "cannot read '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline Json to_json(const FeatureSpec& f) {
  Json pol = Json::array();
  for (auto p : f.lagged_pollutants) pol.push_back(to_string(p));
  Json j;
  j["fourier"] = {{"daily", f.fourier.daily}, {"weekly", f.fourier.weekly}, {"yearly", f.fourier.yearly}};
  j["wind_direction_order"] = f.wind_direction_order;
  j["lag_count"] = f.lag_count;
  j["lagged_pollutants"] = pol;
  j["include_traffic"] = f.include_traffic;
  j["include_traffic_regime"] = f.include_traffic_regime;
  j["meteorological_terms"] = f.meteorological_terms;
  j["expected_covariates"] = f.expected_covariates ? Json(*f.expected_covariates) : Json(nullptr);
  return j;
}

inline FeatureSpec feature_spec_from_json(const Json& j) {
  const std::string w = "features";
  detail::check_keys(j, w, {"fourier", "wind_direction_order", "lag_count", "lagged_pollutants",
                            "include_traffic", "include_traffic_regime", "meteorological_terms",
                            "expected_covariates"});
  FeatureSpec f;
  if (j.contains("fourier")) {
    const auto& fj = j.at("fourier");
    detail::check_keys(fj, w + ".fourier", {"daily", "weekly", "yearly"});
    detail::read(fj, "daily", f.fourier.daily, w + ".fourier");
    detail::read(fj, "weekly", f.fourier.weekly, w + ".fourier");
    detail::read(fj, "yearly", f.fourier.yearly, w + ".fourier");
  }
  detail::read(j, "wind_direction_order", f.wind_direction_order, w);
  detail::read(j, "lag_count", f.lag_count, w);
  if (j.contains("lagged_pollutants")) {
    f.lagged_pollutants = detail::parse_pollutants(j.at("lagged_pollutants"), w + ".lagged_pollutants");
  }
  detail::read(j, "include_traffic", f.include_traffic, w);
  detail::read(j, "include_traffic_regime", f.include_traffic_regime, w);
  detail::read(j, "meteorological_terms", f.meteorological_terms, w);
  if (j.contains("expected_covariates")) {
    const auto& e = j.at("expected_covariates");
    if (e.is_null()) {
      f.expected_covariates.reset();
    } else {
      std::size_t n = 0;
      detail::read(j, "expected_covariates", n, w);
      f.expected_covariates = n;
    }
  }
  return f;
}

inline Json to_json(const ChainConfig& c) {
  Json j;
  j["model"] = to_string(c.model_kind);
  j["n_iterations"] = c.n_iterations;
  j["burn_in"] = c.burn_in;
  j["thin"] = c.thin;
  j["seed"] = c.seed;
  j["initial_scale"] = c.initial_scale;
  j["proposal_scales"] = c.proposal_scales;
  j["accept_low"] = c.accept_low;
  j["accept_high"] = c.accept_high;
  j["tune_window"] = c.tune_window;
  j["tune_up"] = c.tune_up;
  j["tune_down"] = c.tune_down;
  j["adapt_shape"] = c.adapt_shape;
  j["divergence_guard"] = c.divergence_guard;
  j["variable_selection"] = c.variable_selection;
  j["indicator_scheme"] = to_string(c.indicator_scheme);
  j["beta_intercept_only"] = c.model_options.beta_intercept_only;
  j["anchor_gamma_intercept"] = c.model_options.anchor_gamma_intercept;
  return j;
}

inline ChainConfig chain_config_from_json(const Json& j) {
  const std::string w = "chain";
  detail::check_keys(j, w, {"model", "n_iterations", "burn_in", "thin", "seed", "initial_scale",
                            "proposal_scales", "accept_low", "accept_high", "tune_window", "tune_up",
                            "tune_down", "adapt_shape", "divergence_guard", "variable_selection",
                            "indicator_scheme", "beta_intercept_only", "anchor_gamma_intercept"});
  ChainConfig c;
  if (j.contains("model")) {
    std::string s;
    detail::read(j, "model", s, w);
    try {
      c.model_kind = parse_model_kind(s);
    } catch (const Error& e) {
      throw Error(ErrorCode::config, e.what());
    }
  }
  detail::read(j, "n_iterations", c.n_iterations, w);
  detail::read(j, "burn_in", c.burn_in, w);
  detail::read(j, "thin", c.thin, w);
  detail::read(j, "seed", c.seed, w);
  detail::read(j, "initial_scale", c.initial_scale, w);
  detail::read(j, "proposal_scales", c.proposal_scales, w);
  detail::read(j, "accept_low", c.accept_low, w);
  detail::read(j, "accept_high", c.accept_high, w);
  detail::read(j, "tune_window", c.tune_window, w);
  detail::read(j, "tune_up", c.tune_up, w);
  detail::read(j, "tune_down", c.tune_down, w);
  detail::read(j, "adapt_shape", c.adapt_shape, w);
  detail::read(j, "divergence_guard", c.divergence_guard, w);
  detail::read(j, "variable_selection", c.variable_selection, w);
  if (j.contains("indicator_scheme")) {
    std::string s;
    detail::read(j, "indicator_scheme", s, w);
    c.indicator_scheme = parse_indicator_scheme(s);
  }
  detail::read(j, "beta_intercept_only", c.model_options.beta_intercept_only, w);
  detail::read(j, "anchor_gamma_intercept", c.model_options.anchor_gamma_intercept, w);
  return c;
}

inline Json to_json(const SynthSpec& s) {
  Json j;
  j["records"] = s.records;
  j["start"] = s.start;
  j["target"] = to_string(s.target);
  j["model"] = to_string(s.model);
  j["threshold"] = s.threshold;
  j["coefficients"] = s.coefficients;
  j["missing_rate"] = s.missing_rate;
  j["seed"] = s.seed;
  return j;
}

/// Synthetic data share the run's feature spec; `features` is set by the caller.
inline SynthSpec synth_spec_from_json(const Json& j) {
  const std::string w = "synth";
  detail::check_keys(j, w, {"records", "start", "target", "model", "threshold", "coefficients",
                            "missing_rate", "seed"});
  SynthSpec s;
  detail::read(j, "records", s.records, w);
  detail::read(j, "start", s.start, w);
  if (j.contains("target")) {
    std::string t;
    detail::read(j, "target", t, w);
    s.target = parse_pollutant(t);
  }
  if (j.contains("model")) {
    std::string m;
    detail::read(j, "model", m, w);
    s.model = parse_model_kind(m);
  }
  detail::read(j, "threshold", s.threshold, w);
  detail::read(j, "coefficients", s.coefficients, w);
  detail::read(j, "missing_rate", s.missing_rate, w);
  detail::read(j, "seed", s.seed, w);
  return s;
}

inline Json to_json(const RunConfig& c) {
  Json j;
  j["data_path"] = c.data_path;
  j["target_pollutant"] = to_string(c.target);
  if (c.threshold_quantile) j["threshold_quantile"] = *c.threshold_quantile;
  if (c.threshold) j["threshold"] = *c.threshold;
  j["standardize"] = c.standardize;
  j["output_dir"] = c.output_dir;
  j["features"] = to_json(c.features);
  j["chain"] = to_json(c.chain);
  j["return_levels"] = {{"horizons_years", c.return_levels.horizons_years},
                        {"probabilities", c.return_levels.probabilities},
                        {"replicates", c.return_levels.replicates},
                        {"length", c.return_levels.length},
                        {"conditional_rows", c.return_levels.conditional_rows},
                        {"clamp_lags", c.return_levels.clamp_lags}};
  j["scenario"] = {{"reduction", c.scenario.reduction},
                   {"flow_low", c.scenario.flow_low},
                   {"flow_high", c.scenario.flow_high},
                   {"resample_lags", c.scenario.resample_lags}};
  j["compare"] = {{"estimator", c.compare.estimator},
                  {"model1_dir", c.compare.model1_dir},
                  {"model2_dir", c.compare.model2_dir}};
  j["cross_validation"] = {{"train_fraction", c.cross_validation.train_fraction},
                           {"min_exceedances", c.cross_validation.min_exceedances}};
  j["diagnose"] = {{"qq_replicates", c.diagnose.qq_replicates}};
  j["synth"] = to_json(c.synth);
  return j;
}

inline RunConfig run_config_from_json(const Json& j) {
  const std::string w = "config";
  detail::check_keys(j, w, {"data_path", "target_pollutant", "threshold_quantile", "threshold", "standardize",
                            "output_dir", "features", "chain", "return_levels", "scenario", "compare",
                            "cross_validation", "diagnose", "synth"});
  RunConfig c;
  detail::read(j, "data_path", c.data_path, w);
  if (j.contains("target_pollutant")) {
    std::string t;
    detail::read(j, "target_pollutant", t, w);
    try {
      c.target = parse_pollutant(t);
    } catch (const Error& e) {
      throw Error(ErrorCode::config, e.what());
    }
  }
  if (j.contains("threshold")) {
    c.threshold_quantile.reset();
    double u = 0.0;
    detail::read(j, "threshold", u, w);
    c.threshold = u;
  }
  if (j.contains("threshold_quantile")) {
    double q = 0.0;
    detail::read(j, "threshold_quantile", q, w);
    c.threshold_quantile = q;
  }
  detail::read(j, "standardize", c.standardize, w);
  detail::read(j, "output_dir", c.output_dir, w);
  if (j.contains("features")) c.features = feature_spec_from_json(j.at("features"));
  if (j.contains("chain")) c.chain = chain_config_from_json(j.at("chain"));
  if (j.contains("return_levels")) {
    const auto& r = j.at("return_levels");
    const std::string rw = "return_levels";
    detail::check_keys(r, rw, {"horizons_years", "probabilities", "replicates", "length", "conditional_rows",
                                 "clamp_lags"});
    detail::read(r, "horizons_years", c.return_levels.horizons_years, rw);
    detail::read(r, "probabilities", c.return_levels.probabilities, rw);
    detail::read(r, "replicates", c.return_levels.replicates, rw);
    detail::read(r, "length", c.return_levels.length, rw);
    detail::read(r, "conditional_rows", c.return_levels.conditional_rows, rw);
    detail::read(r, "clamp_lags", c.return_levels.clamp_lags, rw);
  }
  if (j.contains("scenario")) {
    const auto& s = j.at("scenario");
    detail::check_keys(s, "scenario", {"reduction", "flow_low", "flow_high", "resample_lags"});
    detail::read(s, "reduction", c.scenario.reduction, "scenario");
    detail::read(s, "flow_low", c.scenario.flow_low, "scenario");
    detail::read(s, "flow_high", c.scenario.flow_high, "scenario");
    detail::read(s, "resample_lags", c.scenario.resample_lags, "scenario");
  }
  if (j.contains("compare")) {
    const auto& s = j.at("compare");
    detail::check_keys(s, "compare", {"estimator", "model1_dir", "model2_dir"});
    detail::read(s, "estimator", c.compare.estimator, "compare");
    detail::read(s, "model1_dir", c.compare.model1_dir, "compare");
    detail::read(s, "model2_dir", c.compare.model2_dir, "compare");
  }
  if (j.contains("cross_validation")) {
    const auto& s = j.at("cross_validation");
    detail::check_keys(s, "cross_validation", {"train_fraction", "min_exceedances"});
    detail::read(s, "train_fraction", c.cross_validation.train_fraction, "cross_validation");
    detail::read(s, "min_exceedances", c.cross_validation.min_exceedances, "cross_validation");
  }
  if (j.contains("diagnose")) {
    const auto& s = j.at("diagnose");
    detail::check_keys(s, "diagnose", {"qq_replicates"});
    detail::read(s, "qq_replicates", c.diagnose.qq_replicates, "diagnose");
  }
  if (j.contains("synth")) c.synth = synth_spec_from_json(j.at("synth"));
  c.synth.features = c.features;
  c.validate();
  return c;
}

inline RunConfig parse_run_config(const std::string& text, const std::string& source = "config") {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::config, source + ": " + e.what());
  }
  return run_config_from_json(j);
}

inline RunConfig load_run_config(const std::string& path) {
  return parse_run_config(detail::read_text(path, ErrorCode::io), path);
}

}  // namespace tspot
