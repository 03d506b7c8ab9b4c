#pragma once

#include <stdexcept>
#include <string>

namespace tspot {

enum class ErrorCode {
  invalid_argument,
  unbounded_quantile,
  mean_undefined,
  degenerate_shift,
  constraint_violation,
  level_below_threshold,
  io,
  parse,
  schema,
  empty_design,
  covariate_count,
  selection_disabled,
  insufficient_samples,
  config,
  missing_artifact,
  model_mismatch,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid_argument";
    case ErrorCode::unbounded_quantile: return "unbounded_quantile";
    case ErrorCode::mean_undefined: return "mean_undefined";
    case ErrorCode::degenerate_shift: return "degenerate_shift";
    case ErrorCode::constraint_violation: return "constraint_violation";
    case ErrorCode::level_below_threshold: return "level_below_threshold";
    case ErrorCode::io: return "io";
    case ErrorCode::parse: return "parse";
    case ErrorCode::schema: return "schema";
    case ErrorCode::empty_design: return "empty_design";
    case ErrorCode::covariate_count: return "covariate_count";
    case ErrorCode::selection_disabled: return "selection_disabled";
    case ErrorCode::insufficient_samples: return "insufficient_samples";
    case ErrorCode::config: return "config";
    case ErrorCode::missing_artifact: return "missing_artifact";
    case ErrorCode::model_mismatch: return "model_mismatch";
  }
  return "unknown";
}

/// Library-wide exception. `code` is stable and machine-readable; the CLI
/// prints it verbatim on failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace tspot
