#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tspot/error.hpp"
#include "tspot/model.hpp"
#include "tspot/random.hpp"
#include "tspot/stats.hpp"

namespace tspot {

/// Unnormalized log posterior over a flat parameter vector; -inf marks an
/// invalid point. With flat priors this is the log-likelihood.
template <class T>
concept LogTarget = requires(const T& t, std::span<const double> theta) {
  { t(theta) } -> std::convertible_to<double>;
};

/// How indicator vectors move between steps.
///  literal: i.i.d. Bernoulli(1/2) redraw every step, unconditionally.
///  flip:    one indicator flip per step, accepted by likelihood ratio.
enum class IndicatorScheme { literal, flip };

inline const char* to_string(IndicatorScheme s) {
  return s == IndicatorScheme::literal ? "literal" : "flip";
}

inline IndicatorScheme parse_indicator_scheme(std::string_view s) {
  if (s == "literal") return IndicatorScheme::literal;
  if (s == "flip") return IndicatorScheme::flip;
  throw Error(ErrorCode::config, "unknown indicator scheme '" + std::string(s) + "'");
}

struct ChainConfig {
  std::size_t n_iterations = 20000;
  std::size_t burn_in = 10000;
  std::size_t thin = 100;
  /// Proposal standard deviations; empty means `initial_scale` on every free
  /// coordinate.
  std::vector<double> proposal_scales;
  double initial_scale = 0.05;
  double accept_low = 0.30;
  double accept_high = 0.70;
  std::uint64_t seed = 1;
  bool variable_selection = false;
  IndicatorScheme indicator_scheme = IndicatorScheme::literal;
  ModelKind model_kind = ModelKind::model1;
  ModelOptions model_options;
  std::size_t tune_window = 500;
  double tune_up = 1.25;
  double tune_down = 0.8;
  /// Rescale coordinates to the spread seen during burn-in (still diagonal).
  bool adapt_shape = true;
  double divergence_guard = 1e6;

  void validate() const {
    if (n_iterations == 0) throw Error(ErrorCode::config, "n_iterations must be positive");
    if (burn_in >= n_iterations) throw Error(ErrorCode::config, "burn_in must be < n_iterations");
    if (thin == 0) throw Error(ErrorCode::config, "thin must be >= 1");
    if (tune_window == 0) throw Error(ErrorCode::config, "tune_window must be >= 1");
    if (!(accept_low > 0.0 && accept_low < accept_high && accept_high < 1.0)) {
      throw Error(ErrorCode::config, "acceptance band must satisfy 0 < low < high < 1");
    }
    if (!(tune_up > 1.0 && tune_down > 0.0 && tune_down < 1.0)) {
      throw Error(ErrorCode::config, "tuning factors must satisfy up > 1 > down > 0");
    }
  }

  friend bool operator==(const ChainConfig&, const ChainConfig&) = default;
};

struct ChainState {
  std::vector<double> theta;
  Indicators indicators;
  double log_lik = kNegInf;
};

/// Starting point: all zeros (Model I); a_0 = 1, everything else zero
/// (Model II), which satisfies alpha + u beta > 0 everywhere.
inline ChainState init_state(ModelKind kind, std::size_t m, bool variable_selection = false) {
  Theta t(kind, m + 1);
  if (kind == ModelKind::model2) t.block(0)[0] = 1.0;
  ChainState s;
  s.theta = std::move(t.storage());
  if (variable_selection) s.indicators.assign(m, 1);
  return s;
}

/// Each indicator independently Bernoulli(1/2).
template <UniformSource R>
Indicators resample_indicators(R& rng, std::size_t m) {
  Indicators out(m);
  for (auto& v : out) v = rng.uniform() < 0.5 ? 1 : 0;
  return out;
}

/// Multiplies every scale by `up` above the band, by `down` below it.
inline std::vector<double> tune_proposals(std::vector<double> scales, double window_acceptance,
                                          const ChainConfig& cfg) {
  double factor = 1.0;
  if (window_acceptance > cfg.accept_high) factor = cfg.tune_up;
  if (window_acceptance < cfg.accept_low) factor = cfg.tune_down;
  for (auto& s : scales) s *= factor;
  return scales;
}

struct Draw {
  std::size_t iteration = 0;
  std::vector<double> theta;
  Indicators indicators;
  double log_lik = kNegInf;
};

struct TuneEvent {
  std::size_t iteration;
  double window_acceptance;
  double factor;
  bool reshaped;
};

struct ChainDiagnostics {
  bool stuck = false;
  bool diverged = false;
  std::string message;
  /// Scales when burn-in ended and when the run ended; must be equal.
  std::vector<double> scales_at_burn_in;
  std::vector<double> scales_at_end;
  std::vector<TuneEvent> tuning_log;
};

/*
 * Thinned post-burn-in draws. `theta` is the latent vector: coefficients of
 * excluded covariates keep their last values. Use effective() for the values
 * that enter the likelihood.
 */
struct PosteriorSampleSet {
  ModelKind kind = ModelKind::model1;
  std::size_t width = 1;
  std::vector<std::string> coordinate_names;
  std::vector<Draw> draws;
  double acceptance_rate = 0.0;
  double burn_in_acceptance_rate = 0.0;
  double indicator_acceptance_rate = 0.0;
  ChainConfig config;
  ChainDiagnostics diagnostics;

  bool selection() const noexcept { return config.variable_selection; }
  std::size_t covariates() const noexcept { return width - 1; }

  std::vector<double> effective(std::size_t i) const {
    std::vector<double> t = draws[i].theta;
    apply_indicators(t, width, draws[i].indicators);
    return t;
  }

  Theta effective_theta(std::size_t i) const { return Theta(kind, width, effective(i)); }

  /// Effective values of one coordinate across draws.
  std::vector<double> trace(std::size_t coordinate) const {
    std::vector<double> out;
    out.reserve(draws.size());
    for (std::size_t i = 0; i < draws.size(); ++i) out.push_back(effective(i)[coordinate]);
    return out;
  }

  std::vector<Summary> coordinate_summaries() const {
    std::vector<Summary> out;
    const std::size_t dim = draws.empty() ? 0 : draws.front().theta.size();
    for (std::size_t j = 0; j < dim; ++j) out.push_back(summarize(trace(j)));
    return out;
  }
};

/*
 * Random-walk Metropolis-Hastings with diagonal Gaussian proposals, flat
 * priors and optional indicator-based variable selection.
 *
 * `width` is the coefficient block length (m + 1); indicators mask column j of
 * every block. For targets without covariate structure pass width equal to
 * the dimension and leave selection off.
 */
template <LogTarget Target>
class MetropolisSampler {
 public:
  MetropolisSampler(const Target& target, ChainConfig config, std::size_t dimension,
                    std::size_t width)
      : target_(target), cfg_(std::move(config)), dim_(dimension), width_(width) {
    cfg_.validate();
    if (width_ == 0 || dim_ % width_ != 0) {
      throw Error(ErrorCode::invalid_argument, "dimension must be a multiple of width");
    }
    if (cfg_.proposal_scales.empty()) cfg_.proposal_scales.assign(dim_, cfg_.initial_scale);
    if (cfg_.proposal_scales.size() != dim_) {
      throw Error(ErrorCode::config, "proposal_scales length does not match parameters");
    }
    scales_ = cfg_.proposal_scales;
  }

  const ChainConfig& config() const noexcept { return cfg_; }
  const std::vector<double>& scales() const noexcept { return scales_; }
  void set_scales(std::vector<double> s) { scales_ = std::move(s); }

  double evaluate(const std::vector<double>& theta, const Indicators& ind) const {
    if (ind.empty()) return target_(theta);
    std::vector<double> eff = theta;
    apply_indicators(eff, width_, ind);
    return target_(eff);
  }

  struct StepResult {
    bool proposed = false;  // a finite proposal reached the accept test
    bool accepted = false;
    bool indicator_proposed = false;
    bool indicator_accepted = false;
  };

  /// One iteration. Proposals with -inf log-likelihood (constraint or support
  /// failure) are rejected outright. `move_indicators` false holds the
  /// indicator vector fixed for this step.
  template <UniformSource R>
  StepResult step(ChainState& state, R& rng, bool move_indicators = true) const {
    StepResult res;
    const bool selecting = cfg_.variable_selection && !state.indicators.empty();
    if (selecting && move_indicators && cfg_.indicator_scheme == IndicatorScheme::literal) {
      state.indicators = resample_indicators(rng, state.indicators.size());
      state.log_lik = evaluate(state.theta, state.indicators);
    }

    // Masked coefficients keep their last values.
    std::vector<double> proposal = state.theta;
    for (std::size_t j = 0; j < dim_; ++j) {
      if (scales_[j] <= 0.0) continue;
      const std::size_t col = j % width_;
      if (selecting && col > 0 && !state.indicators[col - 1]) continue;
      proposal[j] += scales_[j] * rng.normal();
    }
    const double ll = evaluate(proposal, state.indicators);
    if (ll != kNegInf && !std::isnan(ll)) {
      res.proposed = true;
      const double u = rng.uniform();
      if (std::log(u) <= ll - state.log_lik) {
        state.theta = std::move(proposal);
        state.log_lik = ll;
        res.accepted = true;
      }
    }

    if (selecting && move_indicators && cfg_.indicator_scheme == IndicatorScheme::flip) {
      Indicators flipped = state.indicators;
      const std::size_t j = rng.index(flipped.size());
      flipped[j] = flipped[j] ? 0 : 1;
      const double llf = evaluate(state.theta, flipped);
      res.indicator_proposed = true;
      if (llf != kNegInf && !std::isnan(llf)) {
        const double u = rng.uniform();
        if (std::log(u) <= llf - state.log_lik) {
          state.indicators = std::move(flipped);
          state.log_lik = llf;
          res.indicator_accepted = true;
        }
      }
    }
    return res;
  }

  PosteriorSampleSet run(ChainState state) {
    RandomSource rng(cfg_.seed);
    state.log_lik = evaluate(state.theta, state.indicators);
    if (state.log_lik == kNegInf || std::isnan(state.log_lik)) {
      throw Error(ErrorCode::invalid_argument, "initial state has zero likelihood");
    }

    PosteriorSampleSet out;
    out.width = width_;
    out.config = cfg_;
    out.config.proposal_scales = scales_;

    std::size_t window_accepts = 0, window_steps = 0;
    std::size_t burn_accepts = 0, post_accepts = 0, post_steps = 0;
    std::size_t flips_proposed = 0, flips_accepted = 0;
    const auto reshape_points = reshape_iterations();
    std::size_t next_reshape = 0;
    std::vector<double> sum(dim_, 0.0), sum_sq(dim_, 0.0);
    std::size_t moment_count = 0;

    // Flip moves wait for the first half of burn-in so that a coefficient
    // masked later keeps a fitted value and can re-enter.
    const std::size_t flips_from =
        cfg_.indicator_scheme == IndicatorScheme::flip ? cfg_.burn_in / 2 : 0;
    for (std::size_t k = 1; k <= cfg_.n_iterations; ++k) {
      const StepResult r = step(state, rng, k > flips_from);
      const bool burning = k <= cfg_.burn_in;
      window_accepts += r.accepted ? 1 : 0;
      ++window_steps;
      flips_proposed += r.indicator_proposed ? 1 : 0;
      flips_accepted += r.indicator_accepted ? 1 : 0;
      if (burning) {
        burn_accepts += r.accepted ? 1 : 0;
        for (std::size_t j = 0; j < dim_; ++j) {
          sum[j] += state.theta[j];
          sum_sq[j] += state.theta[j] * state.theta[j];
        }
        ++moment_count;
      } else {
        post_accepts += r.accepted ? 1 : 0;
        ++post_steps;
      }

      if (r.accepted && diverged(state.theta)) {
        out.diagnostics.diverged = true;
        out.diagnostics.message = "parameter exceeded divergence guard at iteration " +
                                  std::to_string(k);
        break;
      }

      if (window_steps == cfg_.tune_window) {
        const double acc = static_cast<double>(window_accepts) / static_cast<double>(window_steps);
        if (burning) {
          bool reshaped = false;
          if (cfg_.adapt_shape && next_reshape < reshape_points.size() &&
              k >= reshape_points[next_reshape]) {
            reshaped = reshape(sum, sum_sq, moment_count);
            std::fill(sum.begin(), sum.end(), 0.0);
            std::fill(sum_sq.begin(), sum_sq.end(), 0.0);
            moment_count = 0;
            ++next_reshape;
          }
          const auto before = scales_;
          scales_ = tune_proposals(std::move(scales_), acc, cfg_);
          double factor = 1.0;
          for (std::size_t j = 0; j < dim_; ++j) {
            if (before[j] > 0.0) {
              factor = scales_[j] / before[j];
              break;
            }
          }
          out.diagnostics.tuning_log.push_back({k, acc, factor, reshaped});
        } else if (window_accepts == 0 && !out.diagnostics.stuck) {
          out.diagnostics.stuck = true;
          out.diagnostics.message = "no proposal accepted in window ending at iteration " +
                                    std::to_string(k);
        }
        window_accepts = window_steps = 0;
      }
      if (k == cfg_.burn_in) {
        out.diagnostics.scales_at_burn_in = scales_;
        window_accepts = window_steps = 0;
      }

      if (!burning && (k - cfg_.burn_in) % cfg_.thin == 0) {
        out.draws.push_back({k, state.theta, state.indicators, state.log_lik});
      }
    }
    if (out.diagnostics.scales_at_burn_in.empty()) out.diagnostics.scales_at_burn_in = scales_;
    out.diagnostics.scales_at_end = scales_;
    out.config.proposal_scales = scales_;
    out.burn_in_acceptance_rate =
        cfg_.burn_in ? static_cast<double>(burn_accepts) / static_cast<double>(cfg_.burn_in) : 0.0;
    out.acceptance_rate =
        post_steps ? static_cast<double>(post_accepts) / static_cast<double>(post_steps) : 0.0;
    out.indicator_acceptance_rate =
        flips_proposed ? static_cast<double>(flips_accepted) / static_cast<double>(flips_proposed)
                       : 0.0;
    return out;
  }

 private:
  bool diverged(const std::vector<double>& theta) const {
    for (double v : theta) {
      if (!(std::abs(v) <= cfg_.divergence_guard)) return true;
    }
    return false;
  }

  /// Reshaping happens at 1/4, 1/2 and 3/4 of burn-in, each time from the
  /// moments accumulated since the previous point.
  std::vector<std::size_t> reshape_iterations() const {
    std::vector<std::size_t> pts;
    for (std::size_t q = 1; q <= 3; ++q) {
      const std::size_t k = cfg_.burn_in * q / 4;
      if (k >= 4 * cfg_.tune_window) pts.push_back(k);
    }
    return pts;
  }

  bool reshape(const std::vector<double>& sum, const std::vector<double>& sum_sq,
               std::size_t count) {
    if (count < 2) return false;
    std::size_t free = 0;
    for (double s : scales_) free += s > 0.0 ? 1 : 0;
    if (free == 0) return false;
    const double n = static_cast<double>(count);
    const double lambda = 2.38 / std::sqrt(static_cast<double>(free));
    bool changed = false;
    for (std::size_t j = 0; j < dim_; ++j) {
      if (scales_[j] <= 0.0) continue;
      const double var = (sum_sq[j] - sum[j] * sum[j] / n) / (n - 1.0);
      // A coordinate that never moved keeps its scale.
      if (var > 0.0 && std::isfinite(var)) {
        scales_[j] = lambda * std::sqrt(var);
        changed = true;
      }
    }
    return changed;
  }

  const Target& target_;
  ChainConfig cfg_;
  std::size_t dim_;
  std::size_t width_;
  std::vector<double> scales_;
};

/// Default proposal scales for a POT model: `initial_scale` on free
/// coordinates, 0 on coordinates fixed by the model options.
inline std::vector<double> default_scales(const ChainConfig& cfg, std::size_t width) {
  const auto free = free_coordinates(cfg.model_kind, width, cfg.model_options);
  std::vector<double> s(free.size());
  for (std::size_t j = 0; j < free.size(); ++j) s[j] = free[j] ? cfg.initial_scale : 0.0;
  return s;
}

/*
 * Fits one chain of a POT model to a likelihood evaluator. Deterministic
 * given (config, data); the initial state defaults to init_state().
 */
template <LogTarget Target>
PosteriorSampleSet run_chain(ChainConfig cfg, const Target& target, std::size_t width,
                             std::optional<ChainState> start = std::nullopt) {
  const std::size_t dim = block_count(cfg.model_kind) * width;
  if (cfg.proposal_scales.empty()) cfg.proposal_scales = default_scales(cfg, width);
  ChainState s = start ? *start : init_state(cfg.model_kind, width - 1, cfg.variable_selection);
  if (cfg.variable_selection && s.indicators.empty()) s.indicators.assign(width - 1, 1);
  if (!cfg.variable_selection) s.indicators.clear();
  MetropolisSampler<Target> sampler(target, cfg, dim, width);
  PosteriorSampleSet out = sampler.run(std::move(s));
  out.kind = cfg.model_kind;
  out.coordinate_names = Theta(cfg.model_kind, width).coordinate_names();
  return out;
}

/*
 * Intercept-only moment start: exponential tail with the sample mean excess
 * and the sample exceedance rate, all slopes zero. Starting at sigma = 1
 * instead leaves real data, with excesses in the tens, far out on a ridge
 * where most joint proposals are rejected.
 */
inline ChainState moment_start(const PotLikelihood& lik, bool variable_selection) {
  ChainState s = init_state(lik.kind(), lik.width() - 1, variable_selection);
  const double n = static_cast<double>(lik.rows());
  const double k = static_cast<double>(lik.exceedances());
  if (k == 0.0 || k == n) return s;
  const double m = lik.mean_excess();
  const std::size_t w = lik.width();
  if (lik.kind() == ModelKind::model1) {
    s.theta[0] = std::log(m);
  } else {
    s.theta[0] = m;
  }
  s.theta[(block_count(lik.kind()) - 1) * w] = std::log(k / (n - k));
  return s;
}

inline PosteriorSampleSet run_chain(const ChainConfig& cfg, const PotLikelihood& lik) {
  if (lik.kind() != cfg.model_kind) {
    throw Error(ErrorCode::model_mismatch, "likelihood and chain config disagree on model kind");
  }
  return run_chain(cfg, lik, lik.width(), moment_start(lik, cfg.variable_selection));
}

/// Independent chains from derived seeds. Chain 0 starts at init_state(); the
/// others start from jittered valid points.
template <LogTarget Target>
std::vector<PosteriorSampleSet> run_chains(const ChainConfig& cfg, const Target& target,
                                           std::size_t width, std::size_t chains,
                                           double jitter = 0.1) {
  std::vector<PosteriorSampleSet> out;
  for (std::size_t c = 0; c < chains; ++c) {
    ChainConfig cc = cfg;
    cc.seed = derive_seed(cfg.seed, c);
    ChainState start = init_state(cfg.model_kind, width - 1, cfg.variable_selection);
    if (c > 0) {
      RandomSource rng(derive_seed(cfg.seed, 1000 + c));
      const auto free = free_coordinates(cfg.model_kind, width, cfg.model_options);
      for (int attempt = 0; attempt < 100; ++attempt) {
        ChainState trial = start;
        for (std::size_t j = 0; j < trial.theta.size(); ++j) {
          if (free[j]) trial.theta[j] += jitter * rng.normal();
        }
        if (target(trial.theta) != kNegInf) {
          start = std::move(trial);
          break;
        }
      }
    }
    out.push_back(run_chain(cc, target, width, start));
  }
  return out;
}

/// Gelman-Rubin potential scale reduction per coordinate (effective values).
inline std::vector<double> potential_scale_reduction(
    const std::vector<PosteriorSampleSet>& chains) {
  if (chains.size() < 2) throw Error(ErrorCode::invalid_argument, "need at least two chains");
  std::size_t n = chains.front().draws.size();
  for (const auto& c : chains) n = std::min(n, c.draws.size());
  if (n < 2) throw Error(ErrorCode::insufficient_samples, "chains too short");
  const std::size_t dim = chains.front().draws.front().theta.size();
  const double nn = static_cast<double>(n);
  std::vector<double> rhat(dim, 1.0);
  for (std::size_t j = 0; j < dim; ++j) {
    std::vector<double> means, vars;
    for (const auto& c : chains) {
      auto t = c.trace(j);
      t.resize(n);
      means.push_back(mean(t));
      vars.push_back(variance(t));
    }
    const double w = mean(vars);
    const double b = nn * variance(means);
    if (w <= 0.0) {
      rhat[j] = b <= 0.0 ? 1.0 : std::numeric_limits<double>::infinity();
      continue;
    }
    const double vhat = (nn - 1.0) / nn * w + b / nn;
    rhat[j] = std::sqrt(vhat / w);
  }
  return rhat;
}

/// Posterior inclusion probability of each covariate (mean indicator).
inline std::vector<double> inclusion_probabilities(const PosteriorSampleSet& samples) {
  if (!samples.selection()) {
    throw Error(ErrorCode::selection_disabled, "variable selection was not enabled");
  }
  if (samples.draws.empty()) throw Error(ErrorCode::insufficient_samples, "no draws");
  const std::size_t m = samples.draws.front().indicators.size();
  std::vector<double> p(m, 0.0);
  for (const auto& d : samples.draws) {
    for (std::size_t j = 0; j < m; ++j) p[j] += d.indicators[j];
  }
  for (auto& v : p) v /= static_cast<double>(samples.draws.size());
  return p;
}

/*
 * Model-averaged summary of a posterior functional. Each draw carries its own
 * indicator pattern, so averaging over draws weights visited models by their
 * posterior frequency.
 */
template <class Summarizer>
Summary model_average(const PosteriorSampleSet& samples, Summarizer&& f) {
  std::vector<double> values;
  values.reserve(samples.draws.size());
  for (std::size_t i = 0; i < samples.draws.size(); ++i) {
    values.push_back(static_cast<double>(f(samples.effective_theta(i))));
  }
  return summarize(values);
}

}  // namespace tspot
