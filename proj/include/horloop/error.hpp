#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace horloop {

// Two families: InputError (bad arguments, shapes, config) and
// NumericalFailure (a solver could not reach its tolerance). The CLI maps
// them to exit codes 3 and 4.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public Error {
 public:
  using Error::Error;
};

class NumericalFailure : public Error {
 public:
  using Error::Error;
};

class RankMismatch : public InputError {
 public:
  using InputError::InputError;
};

class UnsupportedOperation : public InputError {
 public:
  using InputError::InputError;
};

class ConfigError : public InputError {
 public:
  using InputError::InputError;
};

// Point left the chart domain. `time` is the curve parameter at which the
// exit was detected (negative when not applicable).
class DomainError : public NumericalFailure {
 public:
  DomainError(const std::string& what, double time = -1.0)
      : NumericalFailure(what), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

class NonHorizontalVelocity : public NumericalFailure {
 public:
  NonHorizontalVelocity(const std::string& what, int interval, double residual)
      : NumericalFailure(what), interval_(interval), residual_(residual) {}
  int interval() const { return interval_; }
  double residual() const { return residual_; }

 private:
  int interval_;
  double residual_;
};

class SteeringFailure : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class ShootingFailure : public NumericalFailure {
 public:
  ShootingFailure(const std::string& what, std::vector<double> history)
      : NumericalFailure(what), history_(std::move(history)) {}
  const std::vector<double>& history() const { return history_; }

 private:
  std::vector<double> history_;
};

class DegenerateSolution : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class ConstraintViolation : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class NearSingularConstraint : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class RestorationFailure : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class MeshFailure : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class LevelCollapse : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

class ContractionFailure : public NumericalFailure {
 public:
  using NumericalFailure::NumericalFailure;
};

}  // namespace horloop
