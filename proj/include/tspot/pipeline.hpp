#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tspot/config.hpp"
#include "tspot/features.hpp"
#include "tspot/inference.hpp"
#include "tspot/io.hpp"
#include "tspot/model.hpp"
#include "tspot/records.hpp"
#include "tspot/sampler.hpp"
#include "tspot/stats.hpp"
#include "tspot/synth.hpp"

namespace tspot {

namespace fs = std::filesystem;

/// Records and the design built from them. `raw` keeps covariates on their
/// original scale; `design` is what the model sees.
struct PreparedData {
  std::vector<ObservationRecord> records;
  Design raw;
  Design design;
  Standardizer standardizer;
};

inline double choose_threshold(const RunConfig& cfg, const std::vector<ObservationRecord>& records) {
  if (cfg.threshold) return *cfg.threshold;
  const auto values = concentrations(records, cfg.target);
  if (values.empty()) {
    throw Error(ErrorCode::empty_design, std::string("no ") + to_string(cfg.target) + " values in data");
  }
  return empirical_quantile_threshold(values, *cfg.threshold_quantile);
}

/// Builds the design. A fitted threshold/standardizer, when given, is reused
/// so later commands see exactly the fitted columns.
inline PreparedData prepare_records(const RunConfig& cfg, std::vector<ObservationRecord> records,
                                    std::optional<double> threshold = std::nullopt,
                                    const Standardizer* fitted = nullptr) {
  PreparedData p;
  p.records = std::move(records);
  const double u = threshold ? *threshold : choose_threshold(cfg, p.records);
  p.raw = build_design_matrix(p.records, cfg.target, u, cfg.features);
  p.design = p.raw;
  if (fitted) {
    p.standardizer = *fitted;
  } else {
    p.standardizer = cfg.standardize ? Standardizer::fit(p.raw) : Standardizer::identity(p.raw.covariates());
  }
  p.standardizer.apply(p.design);
  return p;
}

inline PreparedData prepare_data(const RunConfig& cfg, std::optional<double> threshold = std::nullopt,
                                 const Standardizer* fitted = nullptr) {
  return prepare_records(cfg, ingest_csv(cfg.data_path), threshold, fitted);
}

/// Per-draw coefficients mapped back to raw covariate scale.
inline std::vector<std::vector<double>> raw_scale_draws(const PosteriorSampleSet& s, const Standardizer& st) {
  std::vector<std::vector<double>> out;
  const std::size_t blocks = block_count(s.kind);
  for (std::size_t i = 0; i < s.draws.size(); ++i) {
    const auto eff = s.effective(i);
    std::vector<double> raw;
    for (std::size_t b = 0; b < blocks; ++b) {
      const auto r = st.to_raw(std::span<const double>(eff).subspan(b * s.width, s.width));
      raw.insert(raw.end(), r.begin(), r.end());
    }
    out.push_back(std::move(raw));
  }
  return out;
}

inline std::string coefficient_label(const std::vector<std::string>& covariates, std::size_t column) {
  return column == 0 ? "intercept" : covariates[column - 1];
}

/// Median, 95% interval and inclusion probability of every raw-scale coefficient.
inline CsvTable coefficient_table(const FittedModel& f) {
  const auto& s = f.samples;
  const auto raw = raw_scale_draws(s, f.standardizer);
  const auto prefixes = block_prefixes(s.kind);
  std::vector<double> incl;
  if (s.selection()) incl = inclusion_probabilities(s);
  CsvTable t;
  t.header = {"coefficient", "block", "covariate", "median", "lo95", "hi95", "mean", "sd", "inclusion_probability"};
  std::vector<double> col(raw.size());
  for (std::size_t j = 0; j < s.coordinate_names.size(); ++j) {
    for (std::size_t i = 0; i < raw.size(); ++i) col[i] = raw[i][j];
    const Summary sm = summarize(col);
    const std::size_t c = j % s.width;
    const std::string p = c == 0 || incl.empty() ? "" : format_number(incl[c - 1]);
    t.rows.push_back({s.coordinate_names[j], prefixes[j / s.width], coefficient_label(f.covariate_names, c),
                      format_number(sm.median), format_number(sm.lo), format_number(sm.hi),
                      format_number(sm.mean), format_number(sm.sd), p});
  }
  return t;
}

// ---------------------------------------------------------------------------
// synth

inline Json cmd_synth(const RunConfig& cfg, const fs::path& out) {
  SynthSpec spec = cfg.synth;
  spec.features = cfg.features;
  const auto records = synthesize_records(spec);
  atomic_write(cfg.data_path, format_records(records));
  Json j;
  j["data_path"] = cfg.data_path;
  j["records"] = records.size();
  j["synth"] = to_json(spec);
  write_json(out / "synth_truth.json", j);
  return j;
}

// ---------------------------------------------------------------------------
// fit / select

inline FittedModel fit_design(const RunConfig& cfg, const Design& design, const Standardizer& st) {
  const PotLikelihood lik(design, cfg.chain.model_kind);
  FittedModel f;
  f.samples = run_chain(cfg.chain, lik);
  f.target = cfg.target;
  f.threshold = design.threshold;
  f.covariate_names = design.covariate_names;
  f.standardizer = st;
  f.rows = design.rows();
  f.exceedances = design.exceedance_count();
  return f;
}

inline Json fit_report(const FittedModel& f) {
  Json j = posterior_meta(f);
  j.erase("chain");
  j["diagnostics"].erase("tuning_log");
  return j;
}

inline Json cmd_fit(const RunConfig& cfg, const fs::path& out) {
  const auto data = prepare_data(cfg);
  const FittedModel f = fit_design(cfg, data.design, data.standardizer);
  write_fitted_model(out, f);
  atomic_write(out / "coefficients.csv", coefficient_table(f).str());
  const Json report = fit_report(f);
  write_json(out / "fit_report.json", report);
  return report;
}

/// Fit with variable selection on, plus inclusion probabilities and the most
/// visited indicator patterns.
inline Json cmd_select(RunConfig cfg, const fs::path& out) {
  cfg.chain.variable_selection = true;
  const auto data = prepare_data(cfg);
  const FittedModel f = fit_design(cfg, data.design, data.standardizer);
  write_fitted_model(out, f);
  atomic_write(out / "coefficients.csv", coefficient_table(f).str());

  const auto p = inclusion_probabilities(f.samples);
  Json incl = Json::array();
  for (std::size_t j = 0; j < p.size(); ++j) {
    incl.push_back({{"covariate", f.covariate_names[j]}, {"inclusion_probability", p[j]}});
  }
  std::map<std::string, std::size_t> visits;
  for (const auto& d : f.samples.draws) {
    std::string key;
    for (auto v : d.indicators) key += v ? '1' : '0';
    ++visits[key];
  }
  std::vector<std::pair<std::string, std::size_t>> models(visits.begin(), visits.end());
  std::stable_sort(models.begin(), models.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  Json top = Json::array();
  for (std::size_t k = 0; k < std::min<std::size_t>(models.size(), 10); ++k) {
    top.push_back({{"indicators", models[k].first},
                   {"frequency", static_cast<double>(models[k].second) / f.samples.draws.size()}});
  }
  Json j = fit_report(f);
  j["inclusion"] = incl;
  j["top_models"] = top;
  j["distinct_models"] = models.size();
  write_json(out / "selection.json", j);
  return j;
}

// ---------------------------------------------------------------------------
// Loading a fit back

struct LoadedFit {
  FittedModel fit;
  PreparedData data;
};

inline LoadedFit load_fit(const RunConfig& cfg, const fs::path& dir) {
  LoadedFit l{read_fitted_model(dir), {}};
  if (l.fit.target != cfg.target) {
    throw Error(ErrorCode::model_mismatch, "fit in '" + dir.string() + "' is for a different pollutant");
  }
  l.data = prepare_data(cfg, l.fit.threshold, &l.fit.standardizer);
  if (l.data.design.covariate_names != l.fit.covariate_names) {
    throw Error(ErrorCode::model_mismatch, "feature spec does not match the fit in '" + dir.string() + "'");
  }
  return l;
}

// ---------------------------------------------------------------------------
// diagnose

inline std::vector<double> posterior_mean_rates(const Design& d, const PosteriorSampleSet& s) {
  std::vector<Theta> th;
  for (std::size_t k = 0; k < s.draws.size(); ++k) th.push_back(s.effective_theta(k));
  std::vector<double> out(d.rows(), 0.0);
  for (std::size_t i = 0; i < d.rows(); ++i) {
    double sum = 0.0;
    for (const auto& t : th) sum += logistic(dot(t.rate(), d.row(i)));
    out[i] = sum / static_cast<double>(th.size());
  }
  return out;
}

inline Json fit_diagnostics(const Design& d, const PosteriorSampleSet& s, PitResult* pit_out = nullptr) {
  Json j;
  const PitResult pit = posterior_pit(d, s);
  if (!pit.values.empty()) {
    const auto ks = ks_uniform_test(pit.values);
    j["ks_statistic"] = ks.statistic;
    j["ks_p_value"] = ks.p_value;
  } else {
    j["ks_statistic"] = nullptr;
    j["ks_p_value"] = nullptr;
  }
  j["exceedances"] = pit.values.size();
  j["outside_support"] = pit.outside_support.size();
  const auto rho = posterior_mean_rates(d, s);
  std::vector<std::uint8_t> lab(d.rows());
  for (std::size_t i = 0; i < d.rows(); ++i) lab[i] = d.exceeds(i) ? 1 : 0;
  const auto c = misclassification(rho, lab);
  j["misclassification_rate"] = c.rate;
  j["optimal_class_threshold"] = c.cutoff;
  j["false_positives"] = c.false_positives;
  j["false_negatives"] = c.false_negatives;
  j["rows"] = d.rows();
  if (pit_out) *pit_out = pit;
  return j;
}

inline Json cmd_diagnose(const RunConfig& cfg, const fs::path& out) {
  const auto l = load_fit(cfg, out);
  const Design& d = l.data.design;
  PitResult pit;
  Json j = fit_diagnostics(d, l.fit.samples, &pit);

  CsvTable pt;
  pt.header = {"row", "timestamp", "excess", "pit"};
  for (std::size_t k = 0; k < pit.values.size(); ++k) {
    const auto i = pit.rows[k];
    pt.rows.push_back({std::to_string(i), format_timestamp(d.timestamps[i]),
                       format_number(d.response[i] - d.threshold), format_number(pit.values[k])});
  }
  atomic_write(out / "pit.csv", pt.str());

  RandomSource rng(derive_seed(cfg.chain.seed, 7));
  const auto qq = qq_envelope(d, l.fit.samples, rng, cfg.diagnose.qq_replicates);
  CsvTable qt;
  qt.header = {"observed", "simulated", "lo2.5", "hi97.5"};
  for (const auto& q : qq) {
    qt.rows.push_back({format_number(q.observed), format_number(q.simulated), format_number(q.lo),
                       format_number(q.hi)});
  }
  atomic_write(out / "qq.csv", qt.str());
  j["threshold"] = d.threshold;
  j["model"] = to_string(l.fit.samples.kind);
  write_json(out / "diagnostics.json", j);
  return j;
}

// ---------------------------------------------------------------------------
// return levels and scenario

struct LevelRequest {
  double p;
  std::optional<double> years;
};

inline std::vector<LevelRequest> level_requests(const ReturnLevelConfig& rc) {
  std::vector<LevelRequest> out;
  for (double y : rc.horizons_years) out.push_back({horizon_probability(y), y});
  for (double p : rc.probabilities) out.push_back({p, std::nullopt});
  if (out.empty()) throw Error(ErrorCode::config, "no return-level horizons or probabilities requested");
  return out;
}

/// Shortest per-replicate length giving N >= 20/p pooled and N_r p >= 1.
inline SimulationPlan simulation_plan(const RunConfig& cfg, const std::vector<LevelRequest>& req) {
  double pmin = 1.0;
  for (const auto& r : req) pmin = std::min(pmin, r.p);
  SimulationPlan plan;
  plan.replicates = cfg.return_levels.replicates;
  plan.seed = derive_seed(cfg.chain.seed, 11);
  plan.clamp_lags = cfg.return_levels.clamp_lags;
  const auto reps = static_cast<double>(plan.replicates);
  const auto need = static_cast<std::size_t>(std::ceil(std::max(20.0 / pmin / reps, 1.0 / pmin) - 1e-9));
  plan.length = cfg.return_levels.length ? cfg.return_levels.length : need;
  return plan;
}

inline Json level_json(const ReturnLevelEstimate& e) {
  Json j;
  j["p"] = e.p;
  if (e.horizon_years) j["horizon_years"] = *e.horizon_years;
  j["kind"] = e.conditional ? "conditional" : "marginal";
  j["level"] = e.level;
  j["lo95"] = e.lo;
  j["hi95"] = e.hi;
  j["below_threshold"] = e.below_threshold;
  return j;
}

/// Marginal levels for every request from one set of simulated replicates.
template <class BelowFn>
std::vector<ReturnLevelEstimate> marginal_levels(const LoadedFit& l, const Design& trajectory, const RunConfig& cfg,
                                                 BelowFn&& below, const std::vector<LevelRequest>& req,
                                                 std::size_t* exceedances = nullptr) {
  const auto lags = target_lag_columns(trajectory, cfg.target, cfg.features.lag_count);
  const auto plan = simulation_plan(cfg, req);
  const auto reps = simulate_replicates(trajectory, lags, l.fit.standardizer, l.fit.samples, below, plan);
  if (exceedances) {
    *exceedances = 0;
    for (const auto& r : reps) *exceedances += r.exceedances;
  }
  std::vector<ReturnLevelEstimate> out;
  for (const auto& r : req) {
    auto e = marginal_return_level(reps, r.p, trajectory.threshold);
    e.horizon_years = r.years;
    out.push_back(std::move(e));
  }
  return out;
}

inline Json cmd_return_levels(const RunConfig& cfg, const fs::path& out) {
  const auto l = load_fit(cfg, out);
  const Design& d = l.data.design;
  const auto req = level_requests(cfg.return_levels);
  const auto pool = NonExceedancePool::by_period(d);
  std::size_t exc = 0;
  const auto levels = marginal_levels(l, d, cfg, [&](std::size_t row, RandomSource& g) { return pool(row, g); },
                                      req, &exc);
  const auto plan = simulation_plan(cfg, req);

  Json j;
  j["threshold"] = d.threshold;
  j["observations_per_year"] = kObservationsPerYear;
  j["replicates"] = plan.replicates;
  j["replicate_length"] = plan.length;
  j["simulated_exceedances"] = exc;
  Json marg = Json::array();
  CsvTable draws;
  draws.header = {"kind", "p", "row", "replicate", "level"};
  for (const auto& e : levels) {
    marg.push_back(level_json(e));
    for (std::size_t r = 0; r < e.replicate_levels.size(); ++r) {
      draws.rows.push_back({"marginal", format_number(e.p), "", std::to_string(r), format_number(e.replicate_levels[r])});
    }
  }
  j["marginal"] = marg;

  Json cond = Json::array();
  for (std::size_t row : cfg.return_levels.conditional_rows) {
    if (row >= d.rows()) throw Error(ErrorCode::config, "conditional row " + std::to_string(row) + " out of range");
    for (const auto& r : req) {
      Json cj;
      cj["row"] = row;
      cj["timestamp"] = format_timestamp(d.timestamps[row]);
      try {
        auto e = conditional_return_level(l.fit.samples, d.row(row), d.threshold, r.p);
        e.horizon_years = r.years;
        cj.update(level_json(e));
        for (std::size_t k = 0; k < e.replicate_levels.size(); ++k) {
          draws.rows.push_back({"conditional", format_number(r.p), std::to_string(row), std::to_string(k),
                                format_number(e.replicate_levels[k])});
        }
      } catch (const Error& err) {
        if (err.code() != ErrorCode::level_below_threshold) throw;
        cj["p"] = r.p;
        cj["kind"] = "conditional";
        cj["level"] = nullptr;
        cj["note"] = "p exceeds the exceedance rate in some posterior draws; level would lie below the threshold";
      }
      cond.push_back(cj);
    }
  }
  j["conditional"] = cond;
  atomic_write(out / "return_level_draws.csv", draws.str());
  write_json(out / "return_levels.json", j);
  return j;
}

/// Records with both vehicle flows scaled by `factor`.
inline std::vector<ObservationRecord> scale_flows(std::vector<ObservationRecord> records, double factor) {
  for (auto& r : records) {
    if (r.tf_ldv) *r.tf_ldv *= factor;
    if (r.tf_hgv) *r.tf_hgv *= factor;
  }
  return records;
}

inline Json cmd_scenario(const RunConfig& cfg, const fs::path& out) {
  const auto l = load_fit(cfg, out);
  const Design& base = l.data.design;
  const auto req = level_requests(cfg.return_levels);
  const double factor = 1.0 - cfg.scenario.reduction;
  const auto scaled = prepare_records(cfg, scale_flows(l.data.records, factor), base.threshold, &l.fit.standardizer);
  if (scaled.design.record_index != base.record_index) {
    throw Error(ErrorCode::invalid_argument, "scaled records changed the design rows");
  }

  const auto pool = NonExceedancePool::by_period(base);
  auto baseline_below = [&](std::size_t row, RandomSource& g) { return pool(row, g); };
  const auto baseline = marginal_levels(l, base, cfg, baseline_below, req);

  std::vector<double> flow(base.rows());
  for (std::size_t i = 0; i < base.rows(); ++i) {
    flow[i] = total_flow(l.data.records[base.record_index[i]]).value_or(0.0);
  }
  const FlowWindowPool window(base, flow, cfg.scenario.flow_low, cfg.scenario.flow_high);
  std::vector<ReturnLevelEstimate> scenario;
  if (cfg.scenario.resample_lags) {
    scenario = marginal_levels(l, scaled.design, cfg, [&](std::size_t row, RandomSource& g) { return window(row, g); },
                               req);
  } else {
    scenario = marginal_levels(l, scaled.design, cfg, baseline_below, req);
  }

  Json j;
  j["reduction"] = cfg.scenario.reduction;
  j["flow_factor"] = factor;
  j["flow_window"] = {cfg.scenario.flow_low, cfg.scenario.flow_high};
  j["resample_lags"] = cfg.scenario.resample_lags;
  j["pool_fallbacks"] = cfg.scenario.resample_lags ? window.fallbacks() : 0;
  Json rows = Json::array();
  for (std::size_t k = 0; k < req.size(); ++k) {
    Json r;
    r["p"] = req[k].p;
    if (req[k].years) r["horizon_years"] = *req[k].years;
    r["baseline"] = level_json(baseline[k]);
    r["scenario"] = level_json(scenario[k]);
    rows.push_back(r);
  }
  j["levels"] = rows;
  write_json(out / "scenario.json", j);
  return j;
}

// ---------------------------------------------------------------------------
// compare

inline MarginalLikelihood estimate_log_ml(const RunConfig& cfg, const PosteriorSampleSet& s, const PotLikelihood& lik) {
  if (cfg.compare.estimator == "bridge") return bridge_log_ml(s, lik, derive_seed(cfg.chain.seed, 13));
  return harmonic_mean_log_ml(s);
}

inline Json ml_json(const MarginalLikelihood& m) {
  return {{"method", m.method}, {"log_marginal_likelihood", m.log_value}, {"ess", m.ess},
          {"draws_used", m.used}, {"unstable", m.unstable}};
}

inline Json dic_json(const DicResult& d) {
  return {{"dic", d.dic}, {"mean_deviance", d.mean_deviance}, {"plug_in_deviance", d.plug_in_deviance},
          {"p_d", d.p_d}, {"median_fallback", d.median_fallback}};
}

/// Bayes factor and DIC of two fits on the same data. Returns the summary
/// and writes compare.json into `out`.
inline Json cmd_compare(const RunConfig& cfg, const fs::path& out) {
  if (cfg.compare.model1_dir.empty() || cfg.compare.model2_dir.empty()) {
    throw Error(ErrorCode::config, "compare.model1_dir and compare.model2_dir must both be set");
  }
  const auto l1 = load_fit(cfg, cfg.compare.model1_dir);
  const auto l2 = load_fit(cfg, cfg.compare.model2_dir);
  if (l1.fit.samples.kind != ModelKind::model1) {
    throw Error(ErrorCode::model_mismatch, "compare.model1_dir does not hold a Model I fit");
  }
  if (l2.fit.samples.kind != ModelKind::model2) {
    throw Error(ErrorCode::model_mismatch, "compare.model2_dir does not hold a Model II fit");
  }
  if (l1.fit.threshold != l2.fit.threshold || l1.data.design.rows() != l2.data.design.rows()) {
    throw Error(ErrorCode::model_mismatch, "the two fits use different data or thresholds");
  }
  const PotLikelihood lik1(l1.data.design, ModelKind::model1);
  const PotLikelihood lik2(l2.data.design, ModelKind::model2);
  auto s1 = l1.fit.samples;
  auto s2 = l2.fit.samples;
  recompute_log_liks(s1, lik1);
  recompute_log_liks(s2, lik2);
  const auto m1 = estimate_log_ml(cfg, s1, lik1);
  const auto m2 = estimate_log_ml(cfg, s2, lik2);
  const auto bf = bayes_log_factor(m1, m2);
  const auto d1 = dic(s1, lik1);
  const auto d2 = dic(s2, lik2);
  Json j;
  j["beta21"] = bf.beta21;
  j["category"] = bf.category;
  j["estimator"] = cfg.compare.estimator;
  j["model1"] = {{"marginal_likelihood", ml_json(m1)}, {"dic", dic_json(d1)}};
  j["model2"] = {{"marginal_likelihood", ml_json(m2)}, {"dic", dic_json(d2)}};
  j["dic_prefers"] = d2.dic < d1.dic ? "model2" : "model1";
  write_json(out / "compare.json", j);
  return j;
}

// ---------------------------------------------------------------------------
// cross-validate

inline Json cmd_cross_validate(const RunConfig& cfg, const fs::path& out) {
  const auto all = prepare_data(cfg);
  const auto split = monthly_split(all.raw, cfg.cross_validation.train_fraction, cfg.cross_validation.min_exceedances);
  if (split.train.empty() || split.validate.empty()) {
    throw Error(ErrorCode::insufficient_samples, "no month has enough validation exceedances");
  }
  Design train = all.raw.subset(split.train);
  Design valid = all.raw.subset(split.validate);
  const Standardizer st =
      cfg.standardize ? Standardizer::fit(train) : Standardizer::identity(train.covariates());
  st.apply(train);
  st.apply(valid);
  const FittedModel f = fit_design(cfg, train, st);

  Json months = Json::array();
  for (const auto& m : split.months) {
    Json mj;
    mj["month"] = std::to_string(m.month / 12) + "-" + (m.month % 12 < 9 ? "0" : "") + std::to_string(m.month % 12 + 1);
    mj["rows"] = m.rows;
    mj["train"] = m.train;
    mj["validate"] = m.validate;
    mj["validate_exceedances"] = m.validate_exceedances;
    mj["skipped"] = m.skipped;
    if (!m.note.empty()) mj["note"] = m.note;
    months.push_back(mj);
  }
  Json j;
  j["threshold"] = all.raw.threshold;
  j["train_fraction"] = cfg.cross_validation.train_fraction;
  j["months"] = months;
  j["training"] = fit_diagnostics(train, f.samples);
  j["validation"] = fit_diagnostics(valid, f.samples);
  j["acceptance_rate"] = f.samples.acceptance_rate;
  write_json(out / "cross_validation.json", j);
  return j;
}

}  // namespace tspot
