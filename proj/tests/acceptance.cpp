// Acceptance suite: prints one PASS/FAIL line per criterion with the measured
// numbers behind it. Exit status is nonzero only with --strict (any FAIL) or
// when a check could not run at all.

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "tspot/pipeline.hpp"

using namespace tspot;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v, int digits = 4) {
  std::ostringstream ss;
  ss.precision(digits);
  ss << v;
  return ss.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// ---------------------------------------------------------------------------

Outcome gpd_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst_q = 0.0, worst_x = 0.0, worst_q_xi = 0.0;
  double min_p = 1.0;
  for (double xi : {-0.5, -0.1, 0.0, 0.1, 1.0}) {
    const GpdParams p(1.3, xi);
    for (double lq = -10.0; lq <= 0.0; lq += 0.05) {
      const double q = std::pow(10.0, lq);
      const double x = gpd_quantile(q, p);
      const double e = rel_err(gpd_survival(x, p), q);
      if (e > worst_q) {
        worst_q = e;
        worst_q_xi = xi;
      }
      if (x > 0.0) worst_x = std::max(worst_x, rel_err(gpd_quantile(gpd_survival(x, p), p), x));
    }
    RandomSource rng(derive_seed(101, static_cast<std::uint64_t>(std::llround((xi + 1.0) * 100))));
    std::vector<double> u(100'000);
    for (auto& v : u) v = 1.0 - gpd_survival(gpd_sample(rng, p), p);
    min_p = std::min(min_p, ks_uniform_test(u).p_value);
  }
  const double secs = seconds_since(t0);
  const bool pass = worst_q <= 1e-12 && min_p > 0.01 && secs < 10.0;
  return {pass, "worst survival(quantile(q)) rel err " + fmt(worst_q) + " (xi=" + fmt(worst_q_xi) +
                    "), worst quantile(survival(x)) rel err " + fmt(worst_x) + ", min KS p " + fmt(min_p) +
                    ", " + fmt(secs, 3) + " s"};
}

Outcome threshold_stability() {
  const auto t0 = std::chrono::steady_clock::now();
  RandomSource rng(202);
  std::size_t checked = 0, failures = 0;
  double worst = 0.0;
  while (checked < 10'000) {
    const std::size_t m = 1 + rng.index(6);
    Theta th(ModelKind::model2, m + 1);
    for (auto& v : th.values()) v = rng.normal();
    std::vector<double> c(m + 1, 1.0);
    for (std::size_t j = 1; j <= m; ++j) c[j] = 2.0 * rng.normal();
    const double u = 100.0 * rng.uniform();
    const auto local = try_model2_link(th, u, c);
    if (!local) continue;
    double x = 50.0 * rng.uniform();
    if (local->xi < 0.0) x = 0.99 * rng.uniform() * local->sigma / -local->xi;
    const auto shifted = shift_threshold(*local, x);
    const auto direct = model2_link(th, u + x, c);
    const double e = std::max(rel_err(shifted.sigma, direct.sigma), rel_err(shifted.xi, direct.xi));
    worst = std::max(worst, e);
    if (e > 1e-12) ++failures;
    ++checked;
  }
  const double secs = seconds_since(t0);
  return {failures == 0 && secs < 5.0, std::to_string(checked) + " tuples, " + std::to_string(failures) +
                                           " failures, worst rel err " + fmt(worst) + ", " + fmt(secs, 3) + " s"};
}

/*
 * Model I at covariate values 0, 1, 2 with kappa slope 0.2. Shifting the
 * threshold by x gives log sigma' = log(sigma + x xi) at each point; a Model I
 * fit at u + x needs these on one line in c. The residual is the second
 * difference, which is zero for any line. (Two points always lie on a line,
 * so the witness needs three.)
 */
Outcome model1_instability() {
  const ModelIParams p{{0.0, 1.0}, {0.1, 0.2}, {0.0, 0.0}};
  const double x = 10.0;
  std::vector<double> ls;
  for (double cv : {0.0, 1.0, 2.0}) {
    const std::vector<double> c{1.0, cv};
    ls.push_back(std::log(shift_threshold(model1_link(p, c), x).sigma));
  }
  const double residual = std::abs(ls[2] - 2.0 * ls[1] + ls[0]);
  // The same check passes trivially for Model II, which is closed under shifts.
  const ModelIIParams q{{2.0, 0.5}, {0.3, 0.0}, {0.0, 0.4}, {0.0, 0.0}};
  double m2 = 0.0;
  for (double cv : {0.0, 1.0, 2.0}) {
    const std::vector<double> c{1.0, cv};
    m2 = std::max(m2, rel_err(shift_threshold(model2_link(q, 5.0, c), x).sigma, model2_link(q, 15.0, c).sigma));
  }
  return {residual > 1e-3, "Model I shifted log-sigma residual " + fmt(residual) +
                               " (needs > 1e-3); Model II shift mismatch " + fmt(m2)};
}

// Per-row log-likelihood written out from the link formulas.
double oracle_row(ModelKind kind, std::span<const double> th, const std::vector<double>& c, double y,
                  double u) {
  const std::size_t w = c.size();
  auto dotb = [&](std::size_t b) {
    double s = 0.0;
    for (std::size_t j = 0; j < w; ++j) s += th[b * w + j] * c[j];
    return s;
  };
  double sigma, xi, eta;
  if (kind == ModelKind::model1) {
    sigma = std::exp(dotb(0));
    xi = dotb(1);
    eta = dotb(2);
  } else {
    const double g = std::exp(dotb(2));
    sigma = (dotb(0) + u * dotb(1)) * g;
    xi = dotb(1) * g;
    eta = dotb(3);
    if (!(sigma > 0.0)) return -INFINITY;
  }
  const double rho = 1.0 / (1.0 + std::exp(-eta));
  if (y <= u) return std::log(1.0 - rho);
  const double z = y - u;
  if (std::abs(xi) < 1e-8) return std::log(rho) - std::log(sigma) - z / sigma;
  const double t = 1.0 + xi * z / sigma;
  if (t <= 0.0) return -INFINITY;
  return std::log(rho) - std::log(sigma) - (1.0 + 1.0 / xi) * std::log(t);
}

Outcome likelihood_oracle() {
  RandomSource rng(303);
  double worst = 0.0;
  std::size_t datasets = 0, mismatches = 0;
  for (ModelKind kind : {ModelKind::model1, ModelKind::model2}) {
    for (int k = 0; k < 50; ++k, ++datasets) {
      const std::size_t m = 1 + rng.index(4);
      Design d;
      d.width = m + 1;
      d.threshold = 5.0;
      std::vector<std::vector<double>> rows;
      for (std::size_t i = 0; i < 50; ++i) {
        std::vector<double> c(m + 1, 1.0);
        for (std::size_t j = 1; j <= m; ++j) c[j] = rng.normal();
        const double y = rng.uniform() < 0.3 ? 5.0 - 3.0 * std::log(1.0 - rng.uniform()) : 5.0 * rng.uniform();
        d.push_row(c, y, static_cast<Timestamp>(i) * kGridSeconds, i);
        rows.push_back(c);
      }
      Theta th(kind, m + 1);
      for (auto& v : th.values()) v = 0.2 * rng.normal();
      if (kind == ModelKind::model2) th.block(0)[0] = 3.0;
      double expect = 0.0;
      for (std::size_t i = 0; i < 50; ++i) expect += oracle_row(kind, th.values(), rows[i], d.response[i], 5.0);
      const double a = log_likelihood(th, d);
      const double b = PotLikelihood(d, kind)(th.values());
      for (double got : {a, b}) {
        if (std::isinf(expect) || std::isinf(got)) {
          if (got != expect) ++mismatches;
          continue;
        }
        const double e = std::abs(got - expect);
        worst = std::max(worst, e);
        if (e > 1e-10) ++mismatches;
      }
    }
  }
  return {mismatches == 0, std::to_string(datasets) + " datasets x 50 rows, reference and cell evaluators, " +
                               "worst abs diff " + fmt(worst) + ", " + std::to_string(mismatches) + " mismatches"};
}

Outcome sampler_calibration() {
  auto target = [](std::span<const double> t) { return -0.5 * t[0] * t[0]; };
  ChainConfig cfg;
  cfg.n_iterations = 1'010'000;
  cfg.burn_in = 10'000;
  cfg.thin = 25;
  cfg.initial_scale = 20.0;  // deliberately poor; tuning has to fix it
  cfg.seed = 505;
  MetropolisSampler<decltype(target)> s(target, cfg, 1, 1);
  const auto out = s.run(ChainState{{0.0}, {}, 0.0});
  const auto x = out.trace(0);
  const int bins = 20;
  const boost::math::normal_distribution<> z;
  std::vector<double> edges;
  for (int k = 1; k < bins; ++k) edges.push_back(boost::math::quantile(z, static_cast<double>(k) / bins));
  std::vector<double> count(bins, 0.0);
  for (double v : x) {
    count[static_cast<std::size_t>(std::upper_bound(edges.begin(), edges.end(), v) - edges.begin())] += 1.0;
  }
  const double expected = static_cast<double>(x.size()) / bins;
  double chi2 = 0.0;
  for (double c : count) chi2 += (c - expected) * (c - expected) / expected;
  const double p = boost::math::cdf(boost::math::complement(boost::math::chi_squared_distribution<>(bins - 1), chi2));
  const double acc = out.acceptance_rate;
  const bool pass = p > 0.01 && acc >= 0.30 && acc <= 0.70;
  return {pass, "10^6 post-burn-in steps, chi-square p " + fmt(p) + " (" + std::to_string(x.size()) +
                    " thinned draws); acceptance at frozen scale " + fmt(acc) + " (scale 20 -> " +
                    fmt(out.diagnostics.scales_at_burn_in[0]) + ")"};
}

// ---------------------------------------------------------------------------

Outcome parameter_recovery() {
  const auto t0 = std::chrono::steady_clock::now();
  const double u = 30.0;
  // a, b (intercept only), g (intercept anchored at 0), r; three covariates.
  const ModelIIParams truth_p{{8.0, 2.0, -1.5, 0.0}, {0.15, 0.0, 0.0, 0.0}, {0.0, 0.3, 0.0, -0.2},
                              {-2.0, 0.5, 0.0, -0.4}};
  const Theta truth = truth_p.to_theta();
  const auto free = free_coordinates(ModelKind::model2, 4, ModelOptions{});
  const std::size_t reps = 20;
  std::vector<std::size_t> covered(truth.size(), 0);
  std::vector<std::string> names;
  for (std::size_t r = 0; r < reps; ++r) {
    RandomSource rng(derive_seed(606, r));
    Design d = discrete_covariate_design(rng, 50'000, 3, 5, u);
    simulate_responses(d, truth, rng);
    const PotLikelihood lik(d, ModelKind::model2);
    ChainConfig cfg;
    cfg.model_kind = ModelKind::model2;
    cfg.n_iterations = 200'000;
    cfg.burn_in = 50'000;
    cfg.thin = 100;
    cfg.seed = derive_seed(607, r);
    const auto out = run_chain(cfg, lik);
    names = out.coordinate_names;
    const auto sums = out.coordinate_summaries();
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (sums[j].lo <= truth[j] && truth[j] <= sums[j].hi) ++covered[j];
    }
  }
  const double secs = seconds_since(t0);
  std::size_t worst = reps, total = 0, slots = 0;
  std::string worst_name;
  for (std::size_t j = 0; j < truth.size(); ++j) {
    if (!free[j]) continue;
    total += covered[j];
    slots += reps;
    if (covered[j] < worst) {
      worst = covered[j];
      worst_name = names[j];
    }
  }
  const bool pass = worst * 10 >= reps * 9 && secs < 600.0;
  std::string per;
  for (std::size_t j = 0; j < truth.size(); ++j) {
    if (free[j]) per += " " + names[j] + "=" + std::to_string(covered[j]);
  }
  return {pass, "each coefficient covered in >= " + std::to_string(worst) + "/" + std::to_string(reps) +
                    " reps (lowest " + worst_name + "); pooled " + fmt(static_cast<double>(total) / slots) +
                    "; per coefficient:" + per + "; " + fmt(secs, 4) + " s"};
}

Outcome variable_selection() {
  const std::size_t reps = 20;
  std::size_t wins = 0;
  double min_signal = 1.0, max_noise = 0.0;
  for (std::size_t r = 0; r < reps; ++r) {
    RandomSource rng(derive_seed(707, r));
    Design d = discrete_covariate_design(rng, 20'000, 3, 5, 30.0);
    // x1 drives rate and scale; x2, x3 are pure noise.
    const Theta truth =
        ModelIParams{{0.5, 0.3, 0.0, 0.0}, {0.1, 0.0, 0.0, 0.0}, {-1.5, 0.8, 0.0, 0.0}}.to_theta();
    simulate_responses(d, truth, rng);
    const PotLikelihood lik(d, ModelKind::model1);
    ChainConfig cfg;
    cfg.model_kind = ModelKind::model1;
    cfg.n_iterations = 30'000;
    cfg.burn_in = 10'000;
    cfg.thin = 20;
    cfg.seed = derive_seed(708, r);
    cfg.variable_selection = true;
    cfg.indicator_scheme = IndicatorScheme::flip;
    const auto p = inclusion_probabilities(run_chain(cfg, lik));
    if (p[0] > p[1] && p[0] > p[2]) ++wins;
    min_signal = std::min(min_signal, p[0]);
    max_noise = std::max({max_noise, p[1], p[2]});
  }
  return {wins * 10 >= reps * 9, "signal ranked first in " + std::to_string(wins) + "/" + std::to_string(reps) +
                                     " reps (flip scheme); min signal inclusion " + fmt(min_signal) +
                                     ", max noise inclusion " + fmt(max_noise)};
}

Outcome closed_loop_pit() {
  RandomSource rng(808);
  Design d = discrete_covariate_design(rng, 20'000, 2, 5, 30.0);
  const Theta truth = ModelIParams{{0.7, 0.3, 0.0}, {0.1, -0.1, 0.05}, {-1.2, 0.6, -0.3}}.to_theta();
  simulate_responses(d, truth, rng);
  ChainConfig cfg;
  cfg.model_kind = ModelKind::model1;
  cfg.n_iterations = 30'000;
  cfg.burn_in = 10'000;
  cfg.thin = 20;
  cfg.seed = 809;
  const Theta fitted = posterior_median_theta(run_chain(cfg, PotLikelihood(d, ModelKind::model1)));
  auto link = [&](std::span<const double> c) { return try_link(fitted, d.threshold, c); };
  std::size_t ok = 0;
  double min_p = 1.0;
  for (std::size_t r = 0; r < 100; ++r) {
    RandomSource g(derive_seed(810, r));
    Design sim = d;
    simulate_responses(sim, fitted, g);
    const double p = ks_uniform_test(pit_transform(sim, link).values).p_value;
    if (p > 0.01) ++ok;
    min_p = std::min(min_p, p);
  }
  return {ok >= 95, std::to_string(ok) + "/100 replications with KS p > 0.01 (min p " + fmt(min_p) + ")"};
}

Outcome return_level_oracle() {
  const double u = 50.0, p = 1e-3;
  Design traj;
  traj.width = 1;
  traj.threshold = u;
  const std::vector<double> one{1.0};
  traj.push_row(one, 10.0, 0, 0);
  auto link = [](std::span<const double>) { return std::optional<LocalGpd>(LocalGpd{1.0, 0.0, 0.1}); };
  RandomSource rng(909);
  std::vector<SimulatedSequence> reps{simulate_sequence(
      traj, std::vector<std::size_t>{}, Standardizer{}, link,
      [&](std::size_t, RandomSource& g) { return u * g.uniform(); }, rng, 1'000'000)};
  const auto est = marginal_return_level(reps, p, u);
  const double exact = u + std::log(0.1 / p);
  const double err = std::abs(est.level - exact) / exact;

  double worst = 0.0;
  RandomSource g(910);
  for (int k = 0; k < 2000; ++k) {
    const LocalGpd local{0.5 + 3.0 * g.uniform(), -0.4 + 1.4 * g.uniform(), 0.01 + 0.9 * g.uniform()};
    const double q = local.rho * std::pow(10.0, -6.0 * g.uniform());
    const double level = conditional_return_level(local, u, q);
    const double back = local.rho * gpd_survival(level - u, GpdParams(local.sigma, local.xi));
    worst = std::max(worst, rel_err(back, q));
  }
  return {err < 0.05 && worst <= 1e-10, "marginal p=1e-3 level " + fmt(est.level, 6) + " vs " + fmt(exact, 6) +
                                            " (" + fmt(100 * err, 3) + "% off); conditional inversion worst rel err " +
                                            fmt(worst)};
}

Outcome comparison_direction() {
  const std::size_t reps = 20;
  std::size_t both = 0, bf_ok = 0, dic_ok = 0;
  double min_beta = INFINITY;
  const double u = 30.0;
  // Threshold-varying truth: alpha and gamma both move with the covariates.
  const Theta truth = ModelIIParams{{4.0, 3.0, 0.0}, {0.2, 0.0, 0.0}, {0.0, 0.8, -0.6}, {-1.5, 0.5, -0.5}}.to_theta();
  for (std::size_t r = 0; r < reps; ++r) {
    RandomSource rng(derive_seed(1010, r));
    Design d = discrete_covariate_design(rng, 20'000, 2, 5, u);
    simulate_responses(d, truth, rng);
    ChainConfig cfg;
    cfg.n_iterations = 30'000;
    cfg.burn_in = 10'000;
    cfg.thin = 20;
    cfg.seed = derive_seed(1011, r);
    cfg.model_kind = ModelKind::model1;
    const PotLikelihood l1(d, ModelKind::model1);
    const auto s1 = run_chain(cfg, l1);
    cfg.model_kind = ModelKind::model2;
    const PotLikelihood l2(d, ModelKind::model2);
    const auto s2 = run_chain(cfg, l2);
    const auto bf = bayes_log_factor(harmonic_mean_log_ml(s1), harmonic_mean_log_ml(s2));
    const bool b = bf.beta21 > 0.0;
    const bool dd = dic(s2, l2).dic < dic(s1, l1).dic;
    bf_ok += b;
    dic_ok += dd;
    both += b && dd;
    min_beta = std::min(min_beta, bf.beta21);
  }
  return {both * 10 >= reps * 9, "beta21 > 0 and DIC(M2) < DIC(M1) in " + std::to_string(both) + "/" +
                                     std::to_string(reps) + " reps (beta21 > 0: " + std::to_string(bf_ok) +
                                     ", DIC: " + std::to_string(dic_ok) + ", min beta21 " + fmt(min_beta) + ")"};
}

Outcome misclassification_brute_force() {
  RandomSource rng(1111);
  std::size_t agree = 0;
  const std::size_t fixtures = 200;
  for (std::size_t f = 0; f < fixtures; ++f) {
    std::vector<double> rho(200);
    std::vector<std::uint8_t> lab(200);
    // Coarse values force ties; every fourth fixture is continuous.
    for (std::size_t i = 0; i < 200; ++i) {
      rho[i] = f % 4 == 0 ? rng.uniform() : std::floor(rng.uniform() * 12.0) / 12.0;
      lab[i] = rng.uniform() < rho[i] ? 1 : 0;
    }
    const auto fast = misclassification(rho, lab);
    // Scan every candidate cutoff directly.
    std::vector<double> cands{0.0};
    cands.insert(cands.end(), rho.begin(), rho.end());
    std::size_t best = SIZE_MAX;
    double best_cut = -1.0;
    for (double t : cands) {
      std::size_t e = 0;
      for (std::size_t i = 0; i < 200; ++i) e += (rho[i] > t) != (lab[i] == 1);
      if (e < best || (e == best && t > best_cut)) {
        best = e;
        best_cut = t;
      }
    }
    if (fast.errors == best && fast.cutoff == best_cut) ++agree;
  }
  return {agree == fixtures, std::to_string(agree) + "/" + std::to_string(fixtures) +
                                 " fixtures identical (error count and cutoff)"};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out[fs::relative(e.path(), dir).string()] = slurp(e.path());
  }
  return out;
}

Outcome end_to_end_determinism() {
  const auto dir = fs::temp_directory_path() / "tspot_acceptance_e2e";
  fs::remove_all(dir);
  fs::create_directories(dir);
  Json cfg = Json::parse(R"({
    "features": {"fourier": {"daily": 2, "weekly": 1, "yearly": 0}, "wind_direction_order": 1,
                 "lag_count": 2, "lagged_pollutants": ["no", "no2"], "include_traffic": true,
                 "include_traffic_regime": true, "meteorological_terms": ["ws", "temp", "rh", "ws*temp"],
                 "expected_covariates": null},
    "chain": {"n_iterations": 6000, "burn_in": 2000, "thin": 20, "seed": 12},
    "synth": {"records": 5000, "seed": 12},
    "return_levels": {"horizons_years": [], "probabilities": [0.001, 0.0005], "replicates": 4,
                      "conditional_rows": [100]}
  })");
  cfg["data_path"] = (dir / "run" / "data.csv").string();
  cfg["output_dir"] = (dir / "run" / "out").string();
  write_json(dir / "config.json", cfg);
  const std::string base = std::string(TSPOT_CLI_PATH) + " --config " + (dir / "config.json").string() + " ";
  auto pipeline = [&]() {
    fs::remove_all(dir / "run");
    for (const char* cmd : {"synth", "fit", "diagnose", "return-levels"}) {
      const std::string line = base + cmd + " > " + (dir / "log.txt").string() + " 2>&1";
      if (std::system(line.c_str()) != 0) {
        throw std::runtime_error(std::string(cmd) + " failed: " + slurp(dir / "log.txt"));
      }
    }
    return snapshot(dir / "run");
  };
  const auto first = pipeline();
  const auto second = pipeline();
  std::size_t differing = 0;
  for (const auto& [name, bytes] : first) {
    const auto it = second.find(name);
    if (it == second.end() || it->second != bytes) ++differing;
  }
  const bool pass = differing == 0 && first.size() == second.size() && first.size() >= 8;
  return {pass, std::to_string(first.size()) + " files compared, " + std::to_string(differing) + " differ"};
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  std::vector<int> only;
  for (int i = 1; i < argc; ++i) {
    if (std::strcmp(argv[i], "--strict") == 0) {
      strict = true;
    } else {
      only.push_back(std::atoi(argv[i]));
    }
  }
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"GPD correctness", gpd_correctness},
      {"threshold-stability identity", threshold_stability},
      {"Model I instability witness", model1_instability},
      {"likelihood oracle", likelihood_oracle},
      {"sampler calibration", sampler_calibration},
      {"parameter recovery", parameter_recovery},
      {"variable selection", variable_selection},
      {"closed-loop PIT/KS", closed_loop_pit},
      {"return-level oracle", return_level_oracle},
      {"model-comparison direction", comparison_direction},
      {"misclassification brute force", misclassification_brute_force},
      {"end-to-end determinism", end_to_end_determinism},
  };
  int failed = 0, broken = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k + 1);
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("could not run: ") + e.what()};
      ++broken;
    }
    if (!o.pass) ++failed;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[k].first << ": "
              << o.detail << std::endl;
  }
  if (broken) return 2;
  return strict && failed ? 1 : 0;
}
