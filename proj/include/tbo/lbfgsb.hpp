#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tbo {

using Rng = std::mt19937_64;

struct BoxBounds {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  static BoxBounds uniform(Eigen::Index dim, double lo, double hi) {
    return {Eigen::VectorXd::Constant(dim, lo), Eigen::VectorXd::Constant(dim, hi)};
  }
  Eigen::VectorXd clamp(const Eigen::VectorXd& x) const {
    return x.cwiseMax(lower).cwiseMin(upper);
  }
};

struct LbfgsbOptions {
  int memory = 10;
  int max_iterations = 200;
  int max_line_search = 30;
  double projected_gradient_tolerance = 1e-5;
  // Relative decrease below which the iteration is considered stalled.
  double relative_tolerance = 1e-10;
};

struct LbfgsbResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

/// Objective for minimization: returns f(x) and writes df/dx into `gradient`.
/// Throwing (e.g. NumericalError) is treated as an infeasible point.
using DifferentiableObjective =
    std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& gradient)>;

/// Box-constrained limited-memory quasi-Newton minimization.
///
/// Variables sitting on an active bound (gradient pointing outward) are frozen
/// for the step; the remaining free subspace takes an L-BFGS two-loop
/// direction, and the step is found by backtracking along the projected path.
/// Throws NumericalError if the objective cannot be evaluated at the start.
LbfgsbResult minimize_lbfgsb(const DifferentiableObjective& objective,
                             const Eigen::VectorXd& x0, const BoxBounds& bounds,
                             const LbfgsbOptions& options = {});

struct RestartReport {
  Eigen::VectorXd initial;
  double initial_value = 0.0;  // objective value at the initial point, -inf if infeasible
  double final_value = 0.0;
  bool failed = false;
  std::string message;
};

struct MultiStartResult {
  Eigen::VectorXd x;
  double value = 0.0;  // maximized value
  std::size_t best_restart = 0;
  std::vector<RestartReport> restarts;
};

/// Maximizes `objective` (value, gradient of the value) from each initial
/// point in turn and keeps the best; ties go to the lowest restart index.
/// Throws OptimizationError when every restart fails.
MultiStartResult multistart_maximize(const DifferentiableObjective& objective,
                                     const std::vector<Eigen::VectorXd>& initial_points,
                                     const BoxBounds& bounds,
                                     const LbfgsbOptions& options = {});

}  // namespace tbo
