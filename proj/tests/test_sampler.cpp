#include <gtest/gtest.h>

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/normal.hpp>

#include <cmath>
#include <limits>
#include <vector>

#include "tspot/model.hpp"
#include "tspot/random.hpp"
#include "tspot/sampler.hpp"
#include "tspot/synth.hpp"

using namespace tspot;

namespace {

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::invalid_argument;
}

auto standard_normal = [](std::span<const double> t) { return -0.5 * t[0] * t[0]; };
using NormalTarget = decltype(standard_normal);

ChainConfig toy_config(std::size_t n, std::size_t burn, std::size_t thin, std::uint64_t seed = 1) {
  ChainConfig cfg;
  cfg.n_iterations = n;
  cfg.burn_in = burn;
  cfg.thin = thin;
  cfg.initial_scale = 1.0;
  cfg.seed = seed;
  return cfg;
}

PosteriorSampleSet run_toy(const ChainConfig& cfg) {
  MetropolisSampler<NormalTarget> s(standard_normal, cfg, 1, 1);
  ChainState st;
  st.theta = {0.0};
  return s.run(st);
}

PosteriorSampleSet with_indicators(std::vector<Indicators> ind, std::size_t width = 3) {
  PosteriorSampleSet s;
  s.kind = ModelKind::model1;
  s.width = width;
  s.config.variable_selection = true;
  for (std::size_t i = 0; i < ind.size(); ++i) {
    s.draws.push_back({i, std::vector<double>(3 * width, 1.0), ind[i], 0.0});
  }
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Initialization

TEST(Init, ModelOneStartsAtZero) {
  const auto s = init_state(ModelKind::model1, 2);
  EXPECT_EQ(s.theta, std::vector<double>(9, 0.0));
  EXPECT_TRUE(s.indicators.empty());
}

TEST(Init, ModelTwoStartsWithUnitAlphaIntercept) {
  const auto s = init_state(ModelKind::model2, 2, true);
  std::vector<double> expected(12, 0.0);
  expected[0] = 1.0;
  EXPECT_EQ(s.theta, expected);
  EXPECT_EQ(s.indicators, Indicators(2, 1));
}

TEST(Init, InitialLinkIsUnitScaleExponentialHalfRate) {
  for (auto kind : {ModelKind::model1, ModelKind::model2}) {
    const auto s = init_state(kind, 2);
    const Theta th(kind, 3, s.theta);
    for (double c1 : {-3.0, 0.0, 2.5}) {
      const std::vector<double> c{1.0, c1, -c1};
      const auto local = link(th, 40.0, c);
      EXPECT_DOUBLE_EQ(local.sigma, 1.0);
      EXPECT_DOUBLE_EQ(local.xi, 0.0);
      EXPECT_DOUBLE_EQ(local.rho, 0.5);
    }
  }
}

// ---------------------------------------------------------------------------
// Accept rule

TEST(Step, HigherLikelihoodIsAlwaysAccepted) {
  auto target = [](std::span<const double> t) { return t[0] == 0.0 ? 0.0 : 1.0; };
  ChainConfig cfg = toy_config(10, 0, 1);
  MetropolisSampler<decltype(target)> s(target, cfg, 1, 1);
  RandomSource rng(3);
  for (int k = 0; k < 1000; ++k) {
    ChainState st{{0.0}, {}, 0.0};
    EXPECT_TRUE(s.step(st, rng).accepted);
  }
}

TEST(Step, AcceptanceFrequencyMatchesLikelihoodRatio) {
  // Every proposal leaves 0 and lands where the likelihood ratio is 0.3.
  auto target = [](std::span<const double> t) { return t[0] == 0.0 ? 0.0 : std::log(0.3); };
  ChainConfig cfg = toy_config(10, 0, 1);
  MetropolisSampler<decltype(target)> s(target, cfg, 1, 1);
  RandomSource rng(5);
  const int trials = 100'000;
  int accepted = 0;
  for (int k = 0; k < trials; ++k) {
    ChainState st{{0.0}, {}, 0.0};
    accepted += s.step(st, rng).accepted ? 1 : 0;
  }
  EXPECT_NEAR(static_cast<double>(accepted) / trials, 0.3, 0.005);
}

TEST(Step, InvalidProposalLeavesStateUnchanged) {
  // Model II likelihood whose proposals all break alpha + u beta > 0.
  RandomSource rng(1);
  Design d = discrete_covariate_design(rng, 50, 1, 3, 10.0);
  const PotLikelihood lik(d, ModelKind::model2);
  ChainConfig cfg;
  cfg.model_kind = ModelKind::model2;
  cfg.n_iterations = 10;
  cfg.burn_in = 0;
  cfg.thin = 1;
  std::vector<double> scales(8, 0.0);
  scales[0] = 1e6;  // a_0 jumps far below zero almost surely
  cfg.proposal_scales = scales;
  MetropolisSampler<PotLikelihood> s(lik, cfg, 8, 2);
  ChainState st = init_state(ModelKind::model2, 1);
  st.log_lik = lik(st.theta);
  int rejected = 0;
  for (int k = 0; k < 200; ++k) {
    ChainState copy = st;
    const auto r = s.step(copy, rng);
    if (!r.accepted) {
      EXPECT_EQ(copy.theta, st.theta);
      EXPECT_EQ(copy.log_lik, st.log_lik);
      ++rejected;
    }
  }
  EXPECT_GT(rejected, 80);
}

// ---------------------------------------------------------------------------
// Tuning

TEST(Tuning, ScaleFollowsWindowAcceptance) {
  const ChainConfig cfg;
  const std::vector<double> s{0.1, 0.2};
  EXPECT_GT(tune_proposals(s, 0.9, cfg)[0], 0.1);
  EXPECT_LT(tune_proposals(s, 0.1, cfg)[1], 0.2);
  EXPECT_EQ(tune_proposals(s, 0.5, cfg), s);
  EXPECT_DOUBLE_EQ(tune_proposals(s, 0.9, cfg)[0], 0.125);
  EXPECT_DOUBLE_EQ(tune_proposals(s, 0.1, cfg)[1], 0.16);
}

TEST(Tuning, ScalesFrozenAfterBurnIn) {
  const auto out = run_toy(toy_config(20'000, 8'000, 10));
  EXPECT_EQ(out.diagnostics.scales_at_burn_in, out.diagnostics.scales_at_end);
  ASSERT_FALSE(out.diagnostics.tuning_log.empty());
  for (const auto& e : out.diagnostics.tuning_log) EXPECT_LE(e.iteration, 8'000u);
  EXPECT_GE(out.acceptance_rate, 0.30);
  EXPECT_LE(out.acceptance_rate, 0.70);
}

TEST(Tuning, BadScaleIsPulledIntoBand) {
  // From 1e-3, x1.25 per 500-step window needs about 17000 steps to reach 1.
  ChainConfig cfg = toy_config(40'000, 30'000, 10);
  cfg.initial_scale = 1e-3;
  cfg.adapt_shape = false;
  const auto out = run_toy(cfg);
  EXPECT_GT(out.diagnostics.scales_at_end[0], 0.5);
  EXPECT_GE(out.acceptance_rate, 0.30);
  EXPECT_LE(out.acceptance_rate, 0.70);
}

// ---------------------------------------------------------------------------
// Indicators

TEST(Indicators, MarginalInclusionFrequencyIsHalf) {
  RandomSource rng(8);
  const std::size_t m = 3, draws = 100'000;
  std::vector<double> count(m, 0.0);
  for (std::size_t k = 0; k < draws; ++k) {
    const auto ind = resample_indicators(rng, m);
    for (std::size_t j = 0; j < m; ++j) count[j] += ind[j];
  }
  for (double c : count) EXPECT_NEAR(c / draws, 0.5, 0.005);
}

TEST(Indicators, IncludedCountHasBinomialMoments) {
  RandomSource rng(9);
  const std::size_t m = 10, draws = 200'000;
  double s = 0.0, s2 = 0.0;
  for (std::size_t k = 0; k < draws; ++k) {
    double n = 0.0;
    for (auto v : resample_indicators(rng, m)) n += v;
    s += n;
    s2 += n * n;
  }
  const double mean = s / draws;
  const double var = s2 / draws - mean * mean;
  EXPECT_NEAR(mean, m * 0.5, 0.02);
  EXPECT_NEAR(var, m * 0.25, 0.05);
}

TEST(Indicators, EmptyForNoCovariates) {
  RandomSource rng(1);
  EXPECT_TRUE(resample_indicators(rng, 0).empty());
}

TEST(Indicators, MaskedCoefficientsKeepTheirValues) {
  // Covariate 1 masked: its coefficients never move; covariate 2 does.
  auto target = [](std::span<const double>) { return 0.0; };
  ChainConfig cfg = toy_config(10, 0, 1);
  cfg.variable_selection = true;
  cfg.indicator_scheme = IndicatorScheme::flip;
  MetropolisSampler<decltype(target)> s(target, cfg, 9, 3);
  RandomSource rng(2);
  ChainState st{std::vector<double>(9, 0.5), {0, 1}, 0.0};
  const auto before = st.theta;
  st.indicators = {0, 1};
  s.step(st, rng);
  // The flip happens after the coefficient move, so compare the move only.
  for (std::size_t b = 0; b < 3; ++b) {
    EXPECT_EQ(st.theta[b * 3 + 1], before[b * 3 + 1]);
    EXPECT_NE(st.theta[b * 3 + 2], before[b * 3 + 2]);
  }
}

TEST(Indicators, InclusionProbabilityExamples) {
  const auto always = with_indicators({{1, 0}, {1, 1}, {1, 0}, {1, 1}});
  const auto p = inclusion_probabilities(always);
  EXPECT_DOUBLE_EQ(p[0], 1.0);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
  PosteriorSampleSet off;
  off.draws.push_back({});
  EXPECT_EQ(code_of([&] { inclusion_probabilities(off); }), ErrorCode::selection_disabled);
}

TEST(Indicators, ModelAverageOverPatterns) {
  // Functional = number of included covariates' effect on one coefficient.
  const auto same = with_indicators({{1, 1}, {1, 1}, {1, 1}});
  auto f = [](const Theta& t) { return t[1] + t[2]; };
  EXPECT_DOUBLE_EQ(model_average(same, f).mean, 2.0);
  const auto mixed = with_indicators({{1, 0}, {1, 1}, {1, 0}, {1, 1}});
  EXPECT_DOUBLE_EQ(model_average(mixed, f).mean, (1.0 + 2.0) / 2.0);
}

// ---------------------------------------------------------------------------
// Chains

TEST(Chain, DrawCountFollowsStride) {
  EXPECT_EQ(run_toy(toy_config(1000, 500, 100)).draws.size(), 5u);
  EXPECT_EQ(run_toy(toy_config(1000, 0, 1)).draws.size(), 1000u);
}

TEST(Chain, DrawsAreThePostBurnInStride) {
  const auto out = run_toy(toy_config(1000, 500, 100));
  std::vector<std::size_t> it;
  for (const auto& d : out.draws) it.push_back(d.iteration);
  EXPECT_EQ(it, (std::vector<std::size_t>{600, 700, 800, 900, 1000}));
}

TEST(Chain, InvalidConfigIsRejected) {
  EXPECT_EQ(code_of([] { run_toy(toy_config(100, 100, 1)); }), ErrorCode::config);
  EXPECT_EQ(code_of([] { run_toy(toy_config(100, 10, 0)); }), ErrorCode::config);
}

TEST(Chain, SameSeedGivesIdenticalDraws) {
  const auto a = run_toy(toy_config(5000, 1000, 10, 77));
  const auto b = run_toy(toy_config(5000, 1000, 10, 77));
  const auto c = run_toy(toy_config(5000, 1000, 10, 78));
  ASSERT_EQ(a.draws.size(), b.draws.size());
  for (std::size_t i = 0; i < a.draws.size(); ++i) {
    EXPECT_EQ(a.draws[i].theta, b.draws[i].theta);
    EXPECT_EQ(a.draws[i].log_lik, b.draws[i].log_lik);
  }
  EXPECT_NE(a.draws.back().theta, c.draws.back().theta);
}

TEST(Chain, MarginalMatchesTargetByChiSquare) {
  const auto out = run_toy(toy_config(1'000'000, 10'000, 25, 12));
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
  const boost::math::chi_squared_distribution<> dist(bins - 1);
  EXPECT_GT(boost::math::cdf(boost::math::complement(dist, chi2)), 0.01) << "chi2 " << chi2;
}

TEST(Chain, ThinnedDrawsHaveLowAutocorrelation) {
  const auto out = run_toy(toy_config(200'000, 10'000, 100, 4));
  EXPECT_LT(std::abs(autocorrelation(out.trace(0), 1)), 0.2);
}

TEST(Chain, StuckChainIsDiagnosedNotThrown) {
  auto target = [](std::span<const double> t) {
    return t[0] == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  };
  ChainConfig cfg = toy_config(3000, 1000, 10);
  MetropolisSampler<decltype(target)> s(target, cfg, 1, 1);
  const auto out = s.run(ChainState{{0.0}, {}, 0.0});
  EXPECT_TRUE(out.diagnostics.stuck);
  EXPECT_EQ(out.draws.size(), 200u);
}

TEST(Chain, DivergenceGuardStopsRunaway) {
  auto flat = [](std::span<const double>) { return 0.0; };
  ChainConfig cfg = toy_config(100'000, 90'000, 10);
  cfg.divergence_guard = 1e3;
  MetropolisSampler<decltype(flat)> s(flat, cfg, 1, 1);
  const auto out = s.run(ChainState{{0.0}, {}, 0.0});
  EXPECT_TRUE(out.diagnostics.diverged);
}

TEST(Chain, ModelOneRecoversTruth) {
  // One covariate, n = 20000, five covariate levels.
  RandomSource rng(31);
  Design d = discrete_covariate_design(rng, 20'000, 1, 5, 30.0);
  const Theta truth = ModelIParams{{0.7, 0.3}, {0.15, -0.1}, {-1.2, 0.6}}.to_theta();
  simulate_responses(d, truth, rng);
  const PotLikelihood lik(d, ModelKind::model1);
  ChainConfig cfg;
  cfg.model_kind = ModelKind::model1;
  cfg.n_iterations = 30'000;
  cfg.burn_in = 10'000;
  cfg.thin = 20;
  cfg.seed = 5;
  const auto out = run_chain(cfg, lik);
  const auto sums = out.coordinate_summaries();
  for (std::size_t j = 0; j < truth.size(); ++j) {
    EXPECT_LT(std::abs(sums[j].median - truth[j]), 3.0 * sums[j].sd)
        << out.coordinate_names[j] << " median " << sums[j].median << " truth " << truth[j];
  }
  EXPECT_FALSE(out.diagnostics.stuck);
}

TEST(Chain, SignalOutranksNoiseInInclusion) {
  // x1 drives the rate; x2 is pure noise. Flip moves let the data speak.
  RandomSource rng(41);
  Design d = discrete_covariate_design(rng, 20'000, 2, 5, 30.0);
  const Theta truth = ModelIParams{{0.5, 0.0, 0.0}, {0.1, 0.0, 0.0}, {-1.5, 0.8, 0.0}}.to_theta();
  simulate_responses(d, truth, rng);
  const PotLikelihood lik(d, ModelKind::model1);
  ChainConfig cfg;
  cfg.model_kind = ModelKind::model1;
  cfg.n_iterations = 30'000;
  cfg.burn_in = 10'000;
  cfg.thin = 20;
  cfg.variable_selection = true;
  cfg.indicator_scheme = IndicatorScheme::flip;
  const auto p = inclusion_probabilities(run_chain(cfg, lik));
  EXPECT_GT(p[0], p[1]);
  EXPECT_GT(p[0], 0.9);
}

TEST(Chain, IndependentChainsAgree) {
  const auto chains = run_chains(toy_config(20'000, 5'000, 10, 3), standard_normal, 1, 3);
  ASSERT_EQ(chains.size(), 3u);
  const auto rhat = potential_scale_reduction(chains);
  EXPECT_LT(rhat[0], 1.05);
}
