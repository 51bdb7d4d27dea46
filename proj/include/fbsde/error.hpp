#pragma once

#include <stdexcept>
#include <string>

namespace fbsde {

enum class ErrorCode {
  invalid_argument,
  invalid_split,
  unsupported_claim,
  regression_singular,
  no_solution,
  ambiguous_optimizer,
  invalid_density,
  no_gradient,
  domain_violation,
  bsde_diverged,
  optimizer_undefined,
  not_converged,
  unsupported,
  invalid_parameters,
  assembly_inconsistent,
  parse_error,
  configuration_error,
  key_error,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::invalid_split: return "invalid-split";
    case ErrorCode::unsupported_claim: return "unsupported-claim";
    case ErrorCode::regression_singular: return "regression-singular";
    case ErrorCode::no_solution: return "no-solution";
    case ErrorCode::ambiguous_optimizer: return "ambiguous-optimizer";
    case ErrorCode::invalid_density: return "invalid-density";
    case ErrorCode::no_gradient: return "no-gradient";
    case ErrorCode::domain_violation: return "domain-violation";
    case ErrorCode::bsde_diverged: return "bsde-diverged";
    case ErrorCode::optimizer_undefined: return "optimizer-undefined";
    case ErrorCode::not_converged: return "not-converged";
    case ErrorCode::unsupported: return "unsupported";
    case ErrorCode::invalid_parameters: return "invalid-parameters";
    case ErrorCode::assembly_inconsistent: return "assembly-inconsistent";
    case ErrorCode::parse_error: return "parse-error";
    case ErrorCode::configuration_error: return "configuration-error";
    case ErrorCode::key_error: return "key-error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace fbsde
