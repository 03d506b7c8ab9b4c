// tspot: threshold exceedance modelling of urban pollutant series.
//
//   tspot [--config FILE] [--seed N] [--output DIR] <subcommand>
//
// Every subcommand writes its artifacts into the output directory and prints
// a JSON summary on stdout. Errors go to stderr as "error: <code>: <message>".

#include <cstdint>
#include <functional>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "tspot/pipeline.hpp"

namespace {

using Command = std::function<tspot::Json(const tspot::RunConfig&, const std::filesystem::path&)>;

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string output;
};

tspot::RunConfig resolve_config(const Globals& g) {
  tspot::RunConfig cfg = g.config_path.empty() ? tspot::RunConfig{} : tspot::load_run_config(g.config_path);
  if (g.seed) {
    cfg.chain.seed = *g.seed;
    cfg.synth.seed = *g.seed;
  }
  if (!g.output.empty()) cfg.output_dir = g.output;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian threshold exceedance models for urban pollutant concentrations"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "run configuration (JSON)");
  app.add_option("--seed", g.seed, "random seed; overrides the config");
  app.add_option("--output", g.output, "output directory; overrides the config");

  const std::vector<std::pair<std::string, std::pair<std::string, Command>>> commands = {
      {"synth", {"write a synthetic data set to data_path", tspot::cmd_synth}},
      {"fit", {"fit the configured model and write posterior samples", tspot::cmd_fit}},
      {"diagnose", {"PIT, KS test, misclassification and QQ envelope of a fit", tspot::cmd_diagnose}},
      {"select", {"fit with indicator variable selection", tspot::cmd_select}},
      {"return-levels", {"marginal and conditional return levels from a fit", tspot::cmd_return_levels}},
      {"compare", {"Bayes factor and DIC of a Model I and a Model II fit", tspot::cmd_compare}},
      {"scenario", {"return levels under reduced traffic flow", tspot::cmd_scenario}},
      {"cross-validate", {"monthly train/validation split", tspot::cmd_cross_validate}},
  };
  Command chosen;
  for (const auto& [name, entry] : commands) {
    auto* sub = app.add_subcommand(name, entry.first);
    const Command fn = entry.second;
    sub->callback([&chosen, fn] { chosen = fn; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    const auto cfg = resolve_config(g);
    const tspot::Json summary = chosen(cfg, cfg.output_dir);
    std::cout << summary.dump(2) << "\n";
  } catch (const tspot::Error& e) {
    std::cerr << "error: " << tspot::to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
