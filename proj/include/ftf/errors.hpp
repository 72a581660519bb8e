#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ftf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// An argument lies outside the domain of the operation (e.g. a point behind
/// the camera).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// A caller violated a documented precondition: shape mismatch, empty input,
/// malformed data.
class ContractError : public Error {
 public:
  using Error::Error;
};

/// Input geometry is rank deficient. Carries the condition number that
/// tripped the threshold (may be +inf).
class DegeneracyError : public Error {
 public:
  DegeneracyError(const std::string& what, double condition)
      : Error(what + " (condition " + std::to_string(condition) + ")"),
        condition_(condition) {}

  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

/// Malformed text input. Line numbers are 1-based; 0 means "whole file".
class ParseError : public ContractError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : ContractError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Missing or inconsistent run configuration (absent files, missing seed).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Threshold on the smallest-to-largest singular value ratio below which a
/// linear system is treated as degenerate.
inline constexpr double kDegeneracyRatio = 1e-8;

}  // namespace ftf
