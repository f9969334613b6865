#pragma once

#include <functional>
#include <string>

#include <Eigen/Dense>

namespace spdegrf {

struct LbfgsOptions {
  int max_iterations = 500;
  int history = 10;
  // Converged when ||grad||_inf < gradient_tolerance * max(1, |f|).
  double gradient_tolerance = 1e-5;
  int max_line_search_steps = 40;
  double wolfe_c1 = 1e-4;
  double wolfe_c2 = 0.9;
};

struct LbfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  std::string message;
};

/// Objective to minimize: returns f(x) and writes grad f(x). Throwing
/// spdegrf::Error (or returning a non-finite value) marks x infeasible; the
/// line search then backs off.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

LbfgsResult minimize_lbfgs(const Objective& objective, const Eigen::VectorXd& x0,
                           const LbfgsOptions& options = {});

}  // namespace spdegrf
