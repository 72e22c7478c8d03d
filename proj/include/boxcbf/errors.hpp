#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace boxcbf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Invalid construction parameters (bounds, roots, gains, dimensions).
class ConstructionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// State outside the region where a model's relative degree is declared.
class RegionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Decoupling matrix numerically singular at the evaluated state.
class RankError : public std::runtime_error {
 public:
  RankError(const std::string& what, double sigma_min)
      : std::runtime_error(what), sigma_min_(sigma_min) {}
  double sigma_min() const noexcept { return sigma_min_; }

 private:
  double sigma_min_;
};

// No active set produced a KKT point; either a bug or violated hypotheses.
class InfeasibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConditioningError : public std::runtime_error {
 public:
  ConditioningError(const std::string& what, double condition)
      : std::runtime_error(what), condition_(condition) {}
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

}  // namespace boxcbf
