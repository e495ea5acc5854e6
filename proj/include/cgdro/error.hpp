#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace cgdro {

/// Base class for all library errors. `module()` names the component that
/// raised it so the CLI can report provenance.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(what), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }
  virtual const char* kind() const noexcept { return "error"; }

 private:
  std::string module_;
};

/// Malformed input text (CSV/JSON/TOML).
class ParseError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "parse"; }
};

/// Inputs that parse but violate a documented invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "validation"; }
};

/// File system failures; the message carries the path and OS error.
class IoError : public Error {
 public:
  using Error::Error;
  const char* kind() const noexcept override { return "io"; }
};

/// An iterative routine failed to meet its tolerance.
class NumericalError : public Error {
 public:
  NumericalError(std::string module, const std::string& what, double residual)
      : Error(std::move(module), what), residual_(residual) {}

  double residual() const noexcept { return residual_; }
  const char* kind() const noexcept override { return "numerical"; }

 private:
  double residual_;
};

}  // namespace cgdro
