#pragma once

#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "perfcap/geometry.hpp"

namespace perfcap {

/// One group of residuals touching a subset of the parameter vector.
///
/// `evaluate` receives the full parameter vector and fills `residual`
/// (length num_residuals). When `jacobian` is non-null it must also fill the
/// dense num_residuals x parameters.size() derivative, columns ordered as
/// `parameters`. The objective contribution is weight * |r|^2.
struct ResidualBlock {
  using Evaluate = std::function<void(const VecX& x, VecX& residual, MatX* jacobian)>;

  std::string name;
  std::vector<int> parameters;
  int num_residuals = 0;
  double weight = 1.0;
  Evaluate evaluate;
};

/// Optional per-parameter box; an empty optional leaves the coordinate free.
struct BoxConstraints {
  std::vector<std::optional<std::pair<double, double>>> bounds;

  static BoxConstraints none(int n) { return BoxConstraints{std::vector<std::optional<std::pair<double, double>>>(static_cast<size_t>(n))}; }
  void set(int i, double lower, double upper);
  bool empty() const;
};

struct SolverOptions {
  int max_iters = 100;
  double gradient_tol = 1e-10;
  double step_tol = 1e-12;
  double function_tol = 1e-14;  // relative decrease below which the solve stops
  double initial_damping = 1e-3;
  double max_damping = 1e16;
  int num_threads = 1;
};

enum class Termination { GradientTolerance, StepTolerance, FunctionTolerance, MaxIterations, DampingOverflow, NoParameters };

std::string to_string(Termination t);

struct SolverReport {
  int iterations = 0;
  int accepted_steps = 0;
  double initial_objective = 0.0;
  double final_objective = 0.0;
  std::vector<double> objective_history;  // start value plus every accepted step
  Termination termination = Termination::MaxIterations;
  bool projected_start = false;
  std::vector<std::string> warnings;

  bool converged() const { return termination != Termination::MaxIterations && termination != Termination::DampingOverflow; }
};

/// Sum of weight * |r|^2 over all blocks.
double evaluate_objective(const std::vector<ResidualBlock>& blocks, const VecX& x, int num_threads = 1);

/// Projected Levenberg-Marquardt. `x` is the start point on input and the
/// solution on output; coordinates with bounds stay inside them at every
/// iterate.
SolverReport lm_minimize(const std::vector<ResidualBlock>& blocks, VecX& x, const BoxConstraints& box,
                         const SolverOptions& opts = {});

/// Max over Jacobian entries of |J_analytic - J_central| / (1 + |J_central|);
/// +inf when anything is non-finite.
double check_jacobian(const ResidualBlock& block, const VecX& x, double eps = 1e-6);

}  // namespace perfcap
