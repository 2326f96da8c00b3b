#pragma once

#include <stdexcept>
#include <string>

namespace cascade {

// Structured error codes; the CLI maps these onto process exit codes.
enum class ErrorCode : int {
  ok = 0,
  config_invalid = 2,
  cycle_detected = 3,
  dangling_edge = 4,
  dimension_mismatch = 5,
  incommensurate_resolutions = 6,
  degenerate_link = 7,
  non_positive_observation = 8,
  non_finite_state = 9,
  odd_step_count = 10,
  negative_variance = 11,
  zero_variance = 12,
  diverged = 13,
  degenerate_mean_scale = 14,
  singular_covariance = 15,
  singular_inner_matrix = 16,
  non_finite_gradient = 17,
  degenerate_ensemble = 18,
  degenerate_labels = 19,
  out_of_range = 20,
  sequence_exhausted = 21,
  training_missing = 22,
  no_observation = 23,
  io_error = 24,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }
  int exit_code() const noexcept { return static_cast<int>(code_); }

 private:
  ErrorCode code_;
};

inline const char* error_name(ErrorCode c) {
  switch (c) {
    case ErrorCode::ok: return "Ok";
    case ErrorCode::config_invalid: return "ConfigInvalid";
    case ErrorCode::cycle_detected: return "CycleDetected";
    case ErrorCode::dangling_edge: return "DanglingEdge";
    case ErrorCode::dimension_mismatch: return "DimensionMismatch";
    case ErrorCode::incommensurate_resolutions: return "IncommensurateResolutions";
    case ErrorCode::degenerate_link: return "DegenerateLink";
    case ErrorCode::non_positive_observation: return "NonPositiveObservation";
    case ErrorCode::non_finite_state: return "NonFiniteState";
    case ErrorCode::odd_step_count: return "OddStepCount";
    case ErrorCode::negative_variance: return "NegativeVariance";
    case ErrorCode::zero_variance: return "ZeroVariance";
    case ErrorCode::diverged: return "Diverged";
    case ErrorCode::degenerate_mean_scale: return "DegenerateMeanScale";
    case ErrorCode::singular_covariance: return "SingularCovariance";
    case ErrorCode::singular_inner_matrix: return "SingularInnerMatrix";
    case ErrorCode::non_finite_gradient: return "NonFiniteGradient";
    case ErrorCode::degenerate_ensemble: return "DegenerateEnsemble";
    case ErrorCode::degenerate_labels: return "DegenerateLabels";
    case ErrorCode::out_of_range: return "OutOfRange";
    case ErrorCode::sequence_exhausted: return "SequenceExhausted";
    case ErrorCode::training_missing: return "TrainingMissing";
    case ErrorCode::no_observation: return "NoObservation";
    case ErrorCode::io_error: return "IoError";
  }
  return "Unknown";
}

[[noreturn]] inline void fail(ErrorCode code, const std::string& msg) {
  throw Error(code, std::string(error_name(code)) + ": " + msg);
}

}  // namespace cascade
