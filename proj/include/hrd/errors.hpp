#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hrd {

enum class ErrorCode {
  // network
  negative_rate,
  bad_arity,
  unnormalized_weight,
  mixed_fast_with_d_jump,
  negative_rate_at_runtime,
  // lattice
  insufficient_samples,
  index_out_of_range,
  invalid_grid,
  // ssa
  negative_initial,
  extinct_total,
  negativity_breach,
  event_budget_exceeded,
  // pdmp
  step_rejected,
  zero_hazard,
  jump_budget_exceeded,
  // analysis
  empty_samples,
  quadrature_too_coarse,
  ladder_not_admissible,
  replicate_failures,
  // cli
  parse_error,
  validation_error,
  io_error,
};

constexpr std::string_view to_string(ErrorCode c) {
  switch (c) {
    case ErrorCode::negative_rate: return "NegativeRate";
    case ErrorCode::bad_arity: return "BadArity";
    case ErrorCode::unnormalized_weight: return "UnnormalizedWeight";
    case ErrorCode::mixed_fast_with_d_jump: return "MixedFastWithDJump";
    case ErrorCode::negative_rate_at_runtime: return "NegativeRateAtRuntime";
    case ErrorCode::insufficient_samples: return "InsufficientSamples";
    case ErrorCode::index_out_of_range: return "IndexOutOfRange";
    case ErrorCode::invalid_grid: return "InvalidGrid";
    case ErrorCode::negative_initial: return "NegativeInitial";
    case ErrorCode::extinct_total: return "ExtinctTotal";
    case ErrorCode::negativity_breach: return "NegativityBreach";
    case ErrorCode::event_budget_exceeded: return "EventBudgetExceeded";
    case ErrorCode::step_rejected: return "StepRejected";
    case ErrorCode::zero_hazard: return "ZeroHazard";
    case ErrorCode::jump_budget_exceeded: return "JumpBudgetExceeded";
    case ErrorCode::empty_samples: return "EmptySamples";
    case ErrorCode::quadrature_too_coarse: return "QuadratureTooCoarse";
    case ErrorCode::ladder_not_admissible: return "LadderNotAdmissible";
    case ErrorCode::replicate_failures: return "ReplicateFailures";
    case ErrorCode::parse_error: return "ParseError";
    case ErrorCode::validation_error: return "ValidationError";
    case ErrorCode::io_error: return "IoError";
  }
  return "Unknown";
}

/// All library failures are reported through this exception; `code()` is
/// stable and is what the CLI maps onto exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hrd
