#pragma once

#include <stdexcept>
#include <string>

namespace pot {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad files, arguments, shapes or preconditions. CLI exit code 2.
class InputError : public Error {
 public:
  using Error::Error;
};

// Any failure of a numerical procedure. CLI exit code 1.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ArbitrageError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class InversionError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class CalibrationError : public NumericalError {
 public:
  CalibrationError(const std::string& what, std::string diagnostics)
      : NumericalError(what), diagnostics_(std::move(diagnostics)) {}
  const std::string& diagnostics() const noexcept { return diagnostics_; }

 private:
  std::string diagnostics_;
};

class NodeError : public NumericalError {
 public:
  NodeError(const std::string& what, std::size_t node)
      : NumericalError(what + " at node " + std::to_string(node)), node_(node) {}
  std::size_t node() const noexcept { return node_; }

 private:
  std::size_t node_;
};

class ConditioningError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class ProjectionError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class BumpError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

class EstimationError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

}  // namespace pot
