#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace abh {

/// Bad or inconsistent user input; the CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A computation produced a non-finite value. `where` identifies the offending
/// node, parameter component, step or collocation point depending on the source.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::size_t where)
      : std::runtime_error(what + " (at index " + std::to_string(where) + ")"), where_(where) {}
  std::size_t where() const noexcept { return where_; }

 private:
  std::size_t where_;
};

class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Aggregation or price computation failed (non-positive capital, vanishing mass).
class EquilibriumError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// The finite-difference solver failed to factor a system or to converge.
class OracleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace abh
