#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace tbo {

/// Caller supplied malformed or inconsistent input (shapes, ranges, indices).
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A factorization or solve failed numerically.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, double final_jitter = 0.0)
      : std::runtime_error(what), final_jitter_(final_jitter) {}

  /// Largest diagonal jitter that was tried before giving up.
  double final_jitter() const noexcept { return final_jitter_; }

 private:
  double final_jitter_;
};

/// Every restart of a hyperparameter search failed.
class OptimizationError : public std::runtime_error {
 public:
  OptimizationError(const std::string& what, std::vector<std::string> diagnostics)
      : std::runtime_error(what), diagnostics_(std::move(diagnostics)) {}

  const std::vector<std::string>& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::vector<std::string> diagnostics_;
};

/// Malformed text input; carries the 1-based line number.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, int line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

  int line() const noexcept { return line_; }

 private:
  int line_;
};

/// Every candidate of a discrete domain has already been observed.
class DomainExhausted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace tbo
