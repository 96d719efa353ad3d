#pragma once

#include <stdexcept>
#include <string>

namespace hhvg {

// Caller broke a documented precondition (shape mismatch, empty batch, bad index).
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A value left the numerical domain an operation is defined on
// (non-PD covariance, non-finite loss, singular matrix).
class NumericalDomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class DegenerateDirectionError : public NumericalDomainError {
 public:
  using NumericalDomainError::NumericalDomainError;
};

// Non-finite gradients reached an optimizer; parameters were left untouched.
class PoisonedUpdateError : public NumericalDomainError {
 public:
  using NumericalDomainError::NumericalDomainError;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pipeline stage needs an artifact that another stage has not produced yet.
class DependencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void require(bool condition, const std::string& what) {
  if (!condition) throw ContractViolation(what);
}

}  // namespace hhvg
