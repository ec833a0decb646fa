#include "perfcap/solver.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include "perfcap/error.hpp"
#include "perfcap/parallel.hpp"

namespace perfcap {

void BoxConstraints::set(int i, double lower, double upper) {
  if (!(lower <= upper)) throw InputError("box constraint with lower > upper");
  if (static_cast<size_t>(i) >= bounds.size()) bounds.resize(static_cast<size_t>(i) + 1);
  bounds[static_cast<size_t>(i)] = std::make_pair(lower, upper);
}

bool BoxConstraints::empty() const {
  return std::none_of(bounds.begin(), bounds.end(), [](const auto& b) { return b.has_value(); });
}

std::string to_string(Termination t) {
  switch (t) {
    case Termination::GradientTolerance: return "gradient_tolerance";
    case Termination::StepTolerance: return "step_tolerance";
    case Termination::FunctionTolerance: return "function_tolerance";
    case Termination::MaxIterations: return "max_iterations";
    case Termination::DampingOverflow: return "damping_overflow";
    case Termination::NoParameters: return "no_parameters";
  }
  return "unknown";
}

namespace {

struct Evaluation {
  std::vector<VecX> residuals;
  std::vector<MatX> jacobians;
  double objective = 0.0;
};

void check_finite(const ResidualBlock& b, const VecX& r, const MatX* J) {
  if (!r.allFinite()) throw RuntimeFailure("residual block '" + b.name + "' returned a non-finite residual");
  if (J && !J->allFinite()) throw RuntimeFailure("residual block '" + b.name + "' returned a non-finite Jacobian");
}

void evaluate_blocks(const std::vector<ResidualBlock>& blocks, const VecX& x, bool with_jacobian, int threads,
                     Evaluation& ev) {
  const int n = static_cast<int>(blocks.size());
  ev.residuals.resize(blocks.size());
  if (with_jacobian) ev.jacobians.resize(blocks.size());
  parallel_for(n, threads, [&](int i) {
    const auto& b = blocks[static_cast<size_t>(i)];
    auto& r = ev.residuals[static_cast<size_t>(i)];
    r.setZero(b.num_residuals);
    MatX* J = nullptr;
    if (with_jacobian) {
      J = &ev.jacobians[static_cast<size_t>(i)];
      J->setZero(b.num_residuals, static_cast<Eigen::Index>(b.parameters.size()));
    }
    b.evaluate(x, r, J);
    if (r.size() != b.num_residuals) throw RuntimeFailure("residual block '" + b.name + "' returned a wrong-size residual");
    check_finite(b, r, J);
  });
  ev.objective = 0.0;
  for (size_t i = 0; i < blocks.size(); ++i) ev.objective += blocks[i].weight * ev.residuals[i].squaredNorm();
}

VecX project_to_box(const BoxConstraints& box, VecX x) {
  const auto n = std::min(static_cast<size_t>(x.size()), box.bounds.size());
  for (size_t i = 0; i < n; ++i) {
    if (const auto& b = box.bounds[i]) x[static_cast<Eigen::Index>(i)] = std::clamp(x[static_cast<Eigen::Index>(i)], b->first, b->second);
  }
  return x;
}

// Fixed sparsity pattern of J^T W J (lower triangle) with per-block slots.
struct NormalPattern {
  Eigen::SparseMatrix<double> matrix;
  std::vector<std::vector<int>> slots;  // per block: index into valuePtr for (a, b) with a >= b globally
  std::vector<int> diagonal;

  NormalPattern(const std::vector<ResidualBlock>& blocks, int n) {
    std::vector<Eigen::Triplet<double>> trip;
    for (int i = 0; i < n; ++i) trip.emplace_back(i, i, 0.0);
    for (const auto& b : blocks) {
      for (int p : b.parameters) {
        for (int q : b.parameters) {
          if (p >= q) trip.emplace_back(p, q, 0.0);
        }
      }
    }
    matrix.resize(n, n);
    matrix.setFromTriplets(trip.begin(), trip.end());
    matrix.makeCompressed();
    auto find = [&](int row, int col) {
      const int* begin = matrix.innerIndexPtr() + matrix.outerIndexPtr()[col];
      const int* end = matrix.innerIndexPtr() + matrix.outerIndexPtr()[col + 1];
      return static_cast<int>(std::lower_bound(begin, end, row) - matrix.innerIndexPtr());
    };
    slots.resize(blocks.size());
    for (size_t k = 0; k < blocks.size(); ++k) {
      const auto& ps = blocks[k].parameters;
      auto& s = slots[k];
      s.resize(ps.size() * ps.size(), -1);
      for (size_t a = 0; a < ps.size(); ++a) {
        for (size_t c = 0; c < ps.size(); ++c) {
          if (ps[a] >= ps[c]) s[a * ps.size() + c] = find(ps[a], ps[c]);
        }
      }
    }
    diagonal.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) diagonal[static_cast<size_t>(i)] = find(i, i);
  }
};

}  // namespace

double evaluate_objective(const std::vector<ResidualBlock>& blocks, const VecX& x, int num_threads) {
  Evaluation ev;
  evaluate_blocks(blocks, x, false, num_threads, ev);
  return ev.objective;
}

SolverReport lm_minimize(const std::vector<ResidualBlock>& blocks, VecX& x, const BoxConstraints& box,
                         const SolverOptions& opts) {
  SolverReport report;
  const int n = static_cast<int>(x.size());
  for (const auto& b : blocks) {
    for (int p : b.parameters) {
      if (p < 0 || p >= n) throw InputError("residual block '" + b.name + "' references parameter " + std::to_string(p));
    }
  }
  const VecX projected = project_to_box(box, x);
  if (projected != x) {
    report.projected_start = true;
    report.warnings.push_back("start point outside the box was projected onto it");
    x = projected;
  }

  Evaluation cur;
  evaluate_blocks(blocks, x, true, opts.num_threads, cur);
  report.initial_objective = report.final_objective = cur.objective;
  report.objective_history.push_back(cur.objective);
  if (n == 0) {
    report.termination = Termination::NoParameters;
    return report;
  }

  NormalPattern pattern(blocks, n);
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  ldlt.analyzePattern(pattern.matrix);

  auto is_bounded = [&](int i) { return static_cast<size_t>(i) < box.bounds.size() && box.bounds[static_cast<size_t>(i)]; };

  double mu = opts.initial_damping;
  Eigen::SparseMatrix<double> A = pattern.matrix;
  std::vector<char> fixed(static_cast<size_t>(n));
  Evaluation trial;
  bool done = false;
  while (!done) {
    // Assemble J^T W J (lower) and g = J^T W r.
    std::fill(A.valuePtr(), A.valuePtr() + A.nonZeros(), 0.0);
    VecX g = VecX::Zero(n);
    for (size_t k = 0; k < blocks.size(); ++k) {
      const auto& b = blocks[k];
      const MatX& J = cur.jacobians[k];
      const MatX JtJ = b.weight * (J.transpose() * J);
      const VecX Jtr = b.weight * (J.transpose() * cur.residuals[k]);
      const size_t m = b.parameters.size();
      for (size_t a = 0; a < m; ++a) {
        g[b.parameters[a]] += Jtr[static_cast<Eigen::Index>(a)];
        for (size_t c = 0; c < m; ++c) {
          const int slot = pattern.slots[k][a * m + c];
          if (slot >= 0) A.valuePtr()[slot] += JtJ(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(c));
        }
      }
    }
    // Active set: bound coordinates the gradient pushes outward stay fixed.
    double grad_norm = 0.0;
    for (int i = 0; i < n; ++i) {
      bool f = false;
      if (is_bounded(i)) {
        const auto& [lo, hi] = *box.bounds[static_cast<size_t>(i)];
        f = (x[i] <= lo && g[i] > 0.0) || (x[i] >= hi && g[i] < 0.0);
      }
      fixed[static_cast<size_t>(i)] = f;
      if (!f) grad_norm = std::max(grad_norm, std::abs(2.0 * g[i]));
    }
    if (grad_norm <= opts.gradient_tol) {
      report.termination = Termination::GradientTolerance;
      break;
    }
    for (int col = 0; col < n; ++col) {
      for (Eigen::SparseMatrix<double>::InnerIterator it(A, col); it; ++it) {
        if (fixed[static_cast<size_t>(it.row())] || fixed[static_cast<size_t>(col)]) it.valueRef() = it.row() == col ? 1.0 : 0.0;
      }
    }
    VecX rhs = -g;
    for (int i = 0; i < n; ++i) {
      if (fixed[static_cast<size_t>(i)]) rhs[i] = 0.0;
    }
    std::vector<double> diag(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) diag[static_cast<size_t>(i)] = A.valuePtr()[pattern.diagonal[static_cast<size_t>(i)]];

    // Inner loop: raise damping until a step decreases the objective.
    while (true) {
      if (report.iterations >= opts.max_iters) {
        report.termination = Termination::MaxIterations;
        done = true;
        break;
      }
      ++report.iterations;
      Eigen::SparseMatrix<double> damped = A;
      for (int i = 0; i < n; ++i) {
        if (fixed[static_cast<size_t>(i)]) continue;
        damped.valuePtr()[pattern.diagonal[static_cast<size_t>(i)]] += mu * std::clamp(diag[static_cast<size_t>(i)], 1e-6, 1e32);
      }
      ldlt.factorize(damped);
      VecX delta;
      bool ok = ldlt.info() == Eigen::Success;
      if (ok) {
        delta = ldlt.solve(rhs);
        ok = ldlt.info() == Eigen::Success && delta.allFinite();
      }
      if (!ok) {
        mu *= 10.0;
        if (mu > opts.max_damping) {
          report.termination = Termination::DampingOverflow;
          done = true;
          break;
        }
        continue;
      }
      VecX x_new = project_to_box(box, x + delta);
      for (int i = 0; i < n; ++i) {
        if (fixed[static_cast<size_t>(i)]) x_new[i] = x[i];
      }
      const double step = (x_new - x).norm();
      if (step <= opts.step_tol * (x.norm() + opts.step_tol)) {
        report.termination = Termination::StepTolerance;
        done = true;
        break;
      }
      evaluate_blocks(blocks, x_new, true, opts.num_threads, trial);
      if (trial.objective < cur.objective) {
        const bool small = cur.objective - trial.objective <= opts.function_tol * cur.objective;
        x = std::move(x_new);
        std::swap(cur, trial);
        ++report.accepted_steps;
        report.objective_history.push_back(cur.objective);
        mu = std::max(mu / 10.0, 1e-15);
        if (small) {
          report.termination = Termination::FunctionTolerance;
          done = true;
        }
        break;
      }
      mu *= 10.0;
      if (mu > opts.max_damping) {
        report.termination = Termination::DampingOverflow;
        done = true;
        break;
      }
    }
  }
  report.final_objective = cur.objective;
  return report;
}

double check_jacobian(const ResidualBlock& block, const VecX& x, double eps) {
  const double inf = std::numeric_limits<double>::infinity();
  VecX r(block.num_residuals);
  MatX J = MatX::Zero(block.num_residuals, static_cast<Eigen::Index>(block.parameters.size()));
  try {
    block.evaluate(x, r, &J);
  } catch (const std::exception&) {
    return inf;
  }
  if (!r.allFinite() || !J.allFinite()) return inf;
  double worst = 0.0;
  VecX rp(block.num_residuals), rm(block.num_residuals);
  for (size_t c = 0; c < block.parameters.size(); ++c) {
    VecX xp = x, xm = x;
    xp[block.parameters[c]] += eps;
    xm[block.parameters[c]] -= eps;
    rp.setZero();
    rm.setZero();
    try {
      block.evaluate(xp, rp, nullptr);
      block.evaluate(xm, rm, nullptr);
    } catch (const std::exception&) {
      return inf;
    }
    const VecX numeric = (rp - rm) / (2.0 * eps);
    if (!numeric.allFinite()) return inf;
    for (Eigen::Index i = 0; i < numeric.size(); ++i) {
      const double dev = std::abs(J(i, static_cast<Eigen::Index>(c)) - numeric[i]) / (1.0 + std::abs(numeric[i]));
      worst = std::max(worst, dev);
    }
  }
  return worst;
}

}  // namespace perfcap
