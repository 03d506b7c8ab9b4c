#pragma once

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "tspot/config.hpp"
#include "tspot/error.hpp"
#include "tspot/features.hpp"
#include "tspot/sampler.hpp"

namespace tspot {

/// Shortest decimal that reads back to the same double; "nan"/"inf" spelled out.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

inline double parse_number(std::string_view s, const std::string& where) {
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  double v = 0.0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size()) {
    throw Error(ErrorCode::parse, where + ": bad number '" + std::string(s) + "'");
  }
  return v;
}

/*
 * Writes `content` to a sibling temp file and renames it over `path`, so
 * readers see either the old file or the complete new one.
 */
inline void atomic_write(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write '" + tmp.string() + "'");
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::io, "write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::io, "cannot move output into '" + path.string() + "': " + ec.message());
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  atomic_write(path, j.dump(2) + "\n");
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::missing_artifact, "missing artifact '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::parse, path.string() + ": " + e.what());
  }
}

/// Simple CSV table: header plus rows of already formatted cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    line(header);
    for (const auto& r : rows) line(r);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Posterior artifacts

inline constexpr const char* kPosteriorFile = "posterior.csv";
inline constexpr const char* kPosteriorMetaFile = "posterior_meta.json";

/// Everything later commands need to reuse a fit.
struct FittedModel {
  PosteriorSampleSet samples;
  Pollutant target = Pollutant::no;
  double threshold = 0.0;
  std::vector<std::string> covariate_names;
  Standardizer standardizer;
  std::size_t rows = 0;
  std::size_t exceedances = 0;
};

inline std::string posterior_csv(const PosteriorSampleSet& s) {
  CsvTable t;
  t.header.push_back("iteration");
  for (const auto& n : s.coordinate_names) t.header.push_back(n);
  const std::size_t m = s.selection() ? s.covariates() : 0;
  for (std::size_t j = 1; j <= m; ++j) t.header.push_back("I_" + std::to_string(j));
  for (const auto& d : s.draws) {
    std::vector<std::string> row{std::to_string(d.iteration)};
    for (double v : d.theta) row.push_back(format_number(v));
    for (std::size_t j = 0; j < m; ++j) row.push_back(d.indicators[j] ? "1" : "0");
    t.rows.push_back(std::move(row));
  }
  return t.str();
}

inline Json posterior_meta(const FittedModel& f) {
  const auto& s = f.samples;
  Json tuning = Json::array();
  for (const auto& e : s.diagnostics.tuning_log) {
    tuning.push_back({{"iteration", e.iteration},
                      {"window_acceptance", e.window_acceptance},
                      {"factor", e.factor},
                      {"reshaped", e.reshaped}});
  }
  Json j;
  j["model"] = to_string(s.kind);
  j["seed"] = s.config.seed;
  j["target_pollutant"] = to_string(f.target);
  j["threshold"] = f.threshold;
  j["rows"] = f.rows;
  j["exceedances"] = f.exceedances;
  j["draws"] = s.draws.size();
  j["acceptance_rate"] = s.acceptance_rate;
  j["burn_in_acceptance_rate"] = s.burn_in_acceptance_rate;
  j["indicator_acceptance_rate"] = s.indicator_acceptance_rate;
  j["covariate_names"] = f.covariate_names;
  j["standardizer"] = {{"mean", f.standardizer.mean}, {"scale", f.standardizer.scale}};
  j["chain"] = to_json(s.config);
  j["diagnostics"] = {{"stuck", s.diagnostics.stuck},
                      {"diverged", s.diagnostics.diverged},
                      {"message", s.diagnostics.message},
                      {"scales_at_burn_in", s.diagnostics.scales_at_burn_in},
                      {"tuning_log", tuning}};
  return j;
}

inline void write_fitted_model(const std::filesystem::path& dir, const FittedModel& f) {
  atomic_write(dir / kPosteriorFile, posterior_csv(f.samples));
  write_json(dir / kPosteriorMetaFile, posterior_meta(f));
}

/// Reads a fit written by write_fitted_model. Draw log-likelihoods are not
/// stored; they are NaN until recomputed.
inline FittedModel read_fitted_model(const std::filesystem::path& dir) {
  const Json meta = read_json(dir / kPosteriorMetaFile);
  FittedModel f;
  try {
    f.samples.config = chain_config_from_json(meta.at("chain"));
    f.samples.kind = parse_model_kind(meta.at("model").get<std::string>());
    f.target = parse_pollutant(meta.at("target_pollutant").get<std::string>());
    f.threshold = meta.at("threshold").get<double>();
    f.rows = meta.at("rows").get<std::size_t>();
    f.exceedances = meta.at("exceedances").get<std::size_t>();
    f.covariate_names = meta.at("covariate_names").get<std::vector<std::string>>();
    f.standardizer.mean = meta.at("standardizer").at("mean").get<std::vector<double>>();
    f.standardizer.scale = meta.at("standardizer").at("scale").get<std::vector<double>>();
    f.samples.acceptance_rate = meta.at("acceptance_rate").get<double>();
    f.samples.burn_in_acceptance_rate = meta.at("burn_in_acceptance_rate").get<double>();
    f.samples.indicator_acceptance_rate = meta.at("indicator_acceptance_rate").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::schema, (dir / kPosteriorMetaFile).string() + ": " + e.what());
  }
  auto& s = f.samples;
  s.width = f.covariate_names.size() + 1;
  s.coordinate_names = Theta(s.kind, s.width).coordinate_names();

  const auto path = dir / kPosteriorFile;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::missing_artifact, "missing artifact '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  const auto header = detail::split_commas(line);
  const std::size_t dim = s.coordinate_names.size();
  const std::size_t m = s.selection() ? s.covariates() : 0;
  if (header.size() != 1 + dim + m || header[0] != "iteration") {
    throw Error(ErrorCode::schema, path.string() + ": header does not match the fitted model");
  }
  for (std::size_t j = 0; j < dim; ++j) {
    if (header[j + 1] != s.coordinate_names[j]) {
      throw Error(ErrorCode::schema, path.string() + ": unexpected column '" + std::string(header[j + 1]) + "'");
    }
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = detail::split_commas(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (cells.size() != header.size()) throw Error(ErrorCode::parse, where + ": wrong cell count");
    Draw d;
    d.iteration = static_cast<std::size_t>(parse_number(cells[0], where));
    for (std::size_t j = 0; j < dim; ++j) d.theta.push_back(parse_number(cells[1 + j], where));
    for (std::size_t j = 0; j < m; ++j) d.indicators.push_back(cells[1 + dim + j] == "1" ? 1 : 0);
    d.log_lik = std::numeric_limits<double>::quiet_NaN();
    s.draws.push_back(std::move(d));
  }
  if (s.draws.empty()) throw Error(ErrorCode::insufficient_samples, path.string() + ": no draws");
  return f;
}

/// Fills each draw's log-likelihood from the effective parameters.
template <LogTarget Target>
void recompute_log_liks(PosteriorSampleSet& s, const Target& target) {
  for (std::size_t i = 0; i < s.draws.size(); ++i) s.draws[i].log_lik = target(s.effective(i));
}

}  // namespace tspot
