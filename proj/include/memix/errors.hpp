#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace memix {

// Root of every error the engine throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class TraceError : public Error {
 public:
  using Error::Error;
};

// A caller broke an operation precondition that is not a shape problem
// (non-binary mask, missing trace for a beta rule, ...).
class ContractError : public Error {
 public:
  using Error::Error;
};

// A public matrix operation produced NaN or Inf.
class NumericError : public Error {
 public:
  using Error::Error;
};

// Raised by the stream harness when the state stops being finite.
class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t step, const std::string& what)
      : Error("numerical divergence at step " + std::to_string(step) + ": " + what), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace memix
