#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sdml {

/// Bad argument to a library call (non-finite input, shape or curvature mismatch).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Argument outside the mathematical domain of a function (e.g. |x| > 1).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Unknown utterance/trial id.
class LookupError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Invalid or infeasible configuration; the CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ProtocolInfeasible : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UndefinedMetric : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Non-finite loss or gradient during training.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, long epoch, long step)
      : std::runtime_error(what + " (epoch " + std::to_string(epoch) + ", step " +
                           std::to_string(step) + ")"),
        epoch_(epoch),
        step_(step) {}
  long epoch() const noexcept { return epoch_; }
  long step() const noexcept { return step_; }

 private:
  long epoch_;
  long step_;
};

}  // namespace sdml
