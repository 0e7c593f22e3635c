#pragma once

#include <stdexcept>
#include <string>

namespace relbot {

/// Operand shapes or model structure do not conform to an operation's rule.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Input outside the mathematical domain of a primitive (sqrt of a negative, log of a non-positive).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Parameters or configuration values violate a documented precondition.
class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A stimulus generator could not satisfy its output contract.
class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long long last_finite_step)
      : std::runtime_error(what), last_finite_step_(last_finite_step) {}
  long long last_finite_step() const noexcept { return last_finite_step_; }

 private:
  long long last_finite_step_;
};

/// Filesystem or artifact integrity failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace relbot
