#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace dmhe {

// Ill-conditioned or indefinite matrices encountered during a computation.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A rank requirement on an input matrix does not hold.
class RankError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

// A user-supplied callable produced a non-finite value.
class EvaluationError : public std::runtime_error {
 public:
  EvaluationError(const std::string& what, int index) : std::runtime_error(what), index_(index) {}
  int index() const { return index_; }

 private:
  int index_;
};

class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Iteration cap reached; carries the best iterate found so far.
class NonConvergenceError : public std::runtime_error {
 public:
  NonConvergenceError(const std::string& what, Eigen::VectorXd best)
      : std::runtime_error(what), best_(std::move(best)) {}
  const Eigen::VectorXd& best_iterate() const { return best_; }

 private:
  Eigen::VectorXd best_;
};

// Malformed or inconsistent configuration input.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A per-subsystem failure raised while advancing the coordinator.
class SubsystemError : public std::runtime_error {
 public:
  SubsystemError(const std::string& what, int subsystem)
      : std::runtime_error(what), subsystem_(subsystem) {}
  int subsystem() const { return subsystem_; }

 private:
  int subsystem_;
};

}  // namespace dmhe
