#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace confdim {

/// Invalid input data or configuration. The message names the offending field.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// A growth or covering hypothesis failed during a window scan.
class HypothesisError : public std::runtime_error {
 public:
  HypothesisError(const std::string& what, double center, double radius)
      : std::runtime_error(what), center_(center), radius_(radius) {}

  double center() const noexcept { return center_; }
  double radius() const noexcept { return radius_; }

 private:
  double center_;
  double radius_;
};

/// A covering constraint cannot be satisfied by any nonnegative density.
class InfeasibleError : public std::runtime_error {
 public:
  InfeasibleError(const std::string& what, std::size_t index)
      : std::runtime_error(what), index_(index) {}

  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

/// The convex solver stopped before reaching its KKT target.
class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace confdim
