#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include <Eigen/Dense>

#include "perfcap/error.hpp"
#include "perfcap/solver.hpp"

using namespace perfcap;

namespace {

ResidualBlock shift_block(double target) {
  ResidualBlock b;
  b.name = "shift";
  b.parameters = {0};
  b.num_residuals = 1;
  b.evaluate = [target](const VecX& x, VecX& r, MatX* J) {
    r[0] = x[0] - target;
    if (J) (*J)(0, 0) = 1.0;
  };
  return b;
}

ResidualBlock linear_block(const MatX& A, const VecX& b, double weight = 1.0) {
  ResidualBlock blk;
  blk.name = "linear";
  for (int i = 0; i < A.cols(); ++i) blk.parameters.push_back(i);
  blk.num_residuals = static_cast<int>(A.rows());
  blk.weight = weight;
  blk.evaluate = [A, b](const VecX& x, VecX& r, MatX* J) {
    r = A * x - b;
    if (J) *J = A;
  };
  return blk;
}

std::vector<ResidualBlock> rosenbrock() {
  ResidualBlock b;
  b.name = "rosenbrock";
  b.parameters = {0, 1};
  b.num_residuals = 2;
  b.evaluate = [](const VecX& x, VecX& r, MatX* J) {
    r[0] = 10.0 * (x[1] - x[0] * x[0]);
    r[1] = 1.0 - x[0];
    if (J) {
      *J << -20.0 * x[0], 10.0, -1.0, 0.0;
    }
  };
  return {b};
}

}  // namespace

TEST_CASE("scalar linear least squares converges to the root") {
  VecX x = VecX::Zero(1);
  const auto rep = lm_minimize({shift_block(3.0)}, x, BoxConstraints::none(1));
  CHECK(std::abs(x[0] - 3.0) <= 1e-10);
  CHECK(rep.converged());
}

TEST_CASE("active upper bound clamps the optimum") {
  VecX x = VecX::Zero(1);
  BoxConstraints box = BoxConstraints::none(1);
  box.set(0, -1.0, 1.0);
  const auto rep = lm_minimize({shift_block(3.0)}, x, box);
  CHECK(x[0] == 1.0);
  CHECK(rep.final_objective == doctest::Approx(4.0));
}

TEST_CASE("Rosenbrock converges from the classic start") {
  VecX x(2);
  x << -1.2, 1.0;
  SolverOptions opts;
  opts.max_iters = 200;
  const auto rep = lm_minimize(rosenbrock(), x, BoxConstraints::none(2), opts);
  CHECK(std::abs(x[0] - 1.0) <= 1e-6);
  CHECK(std::abs(x[1] - 1.0) <= 1e-6);
  CHECK(rep.iterations < 200);
  CHECK(rep.final_objective <= 1e-12);
}

TEST_CASE("accepted steps never increase the objective") {
  VecX x(2);
  x << -1.2, 1.0;
  const auto rep = lm_minimize(rosenbrock(), x, BoxConstraints::none(2));
  for (size_t i = 1; i < rep.objective_history.size(); ++i) {
    CHECK(rep.objective_history[i] <= rep.objective_history[i - 1]);
  }
}

TEST_CASE("convex quadratic reaches the normal-equation solution") {
  std::mt19937 rng(1);
  std::normal_distribution<double> n(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    MatX A(12, 5);
    VecX b(12);
    for (int i = 0; i < A.size(); ++i) A.data()[i] = n(rng);
    for (int i = 0; i < b.size(); ++i) b[i] = n(rng);
    const VecX closed = (A.transpose() * A).ldlt().solve(A.transpose() * b);
    VecX x = VecX::Zero(5);
    lm_minimize({linear_block(A, b, 2.5)}, x, BoxConstraints::none(5));
    CHECK((x - closed).norm() <= 1e-8);
  }
}

TEST_CASE("every iterate stays inside the box") {
  std::mt19937 rng(2);
  std::normal_distribution<double> n(0.0, 1.0);
  MatX A(8, 4);
  VecX b(8);
  for (int i = 0; i < A.size(); ++i) A.data()[i] = n(rng);
  for (int i = 0; i < b.size(); ++i) b[i] = 5.0 * n(rng);
  BoxConstraints box = BoxConstraints::none(4);
  for (int i = 0; i < 4; ++i) box.set(i, -0.3, 0.2);
  auto blk = linear_block(A, b);
  auto inner = blk.evaluate;
  bool outside = false;
  blk.evaluate = [&, inner](const VecX& x, VecX& r, MatX* J) {
    for (int i = 0; i < x.size(); ++i) outside |= x[i] < -0.3 || x[i] > 0.2;
    inner(x, r, J);
  };
  VecX x = VecX::Constant(4, 0.1);
  lm_minimize({blk}, x, box);
  CHECK_FALSE(outside);
  // KKT: free coordinates have zero gradient, bound ones push outward.
  const VecX g = A.transpose() * (A * x - b);
  for (int i = 0; i < 4; ++i) {
    if (x[i] > -0.3 && x[i] < 0.2) CHECK(std::abs(g[i]) <= 1e-7);
    if (x[i] == -0.3) CHECK(g[i] >= -1e-9);
    if (x[i] == 0.2) CHECK(g[i] <= 1e-9);
  }
}

TEST_CASE("infeasible start is projected and reported") {
  VecX x = VecX::Constant(1, 5.0);
  BoxConstraints box = BoxConstraints::none(1);
  box.set(0, -1.0, 1.0);
  const auto rep = lm_minimize({shift_block(0.5)}, x, box);
  CHECK(rep.projected_start);
  CHECK(std::abs(x[0] - 0.5) <= 1e-10);
}

TEST_CASE("non-finite residuals raise an error naming the block") {
  ResidualBlock b = shift_block(1.0);
  b.name = "bad_block";
  b.evaluate = [](const VecX&, VecX& r, MatX* J) {
    r[0] = std::numeric_limits<double>::quiet_NaN();
    if (J) (*J)(0, 0) = 1.0;
  };
  VecX x = VecX::Zero(1);
  try {
    lm_minimize({b}, x, BoxConstraints::none(1));
    FAIL("expected an error");
  } catch (const RuntimeFailure& e) {
    CHECK(std::string(e.what()).find("bad_block") != std::string::npos);
  }
}

TEST_CASE("singular normal equations do not crash") {
  // r = x0 + x1 - 1: rank one.
  ResidualBlock b;
  b.name = "rank1";
  b.parameters = {0, 1};
  b.num_residuals = 1;
  b.evaluate = [](const VecX& x, VecX& r, MatX* J) {
    r[0] = x[0] + x[1] - 1.0;
    if (J) *J << 1.0, 1.0;
  };
  VecX x = VecX::Zero(2);
  const auto rep = lm_minimize({b}, x, BoxConstraints::none(2));
  CHECK(std::abs(x[0] + x[1] - 1.0) <= 1e-8);
  CHECK(rep.final_objective <= 1e-16);
}

TEST_CASE("parallel block evaluation gives identical results") {
  std::vector<ResidualBlock> blocks;
  for (int k = 0; k < 12; ++k) {
    ResidualBlock b;
    b.name = "b" + std::to_string(k);
    b.parameters = {k % 4, (k + 1) % 4};
    b.num_residuals = 1;
    b.evaluate = [k](const VecX& x, VecX& r, MatX* J) {
      const int i = k % 4, j = (k + 1) % 4;
      r[0] = std::sin(x[i]) * x[j] - 0.1 * k;
      if (J) *J << std::cos(x[i]) * x[j], std::sin(x[i]);
    };
    blocks.push_back(b);
  }
  VecX x1 = VecX::Constant(4, 0.5), x2 = x1;
  SolverOptions o1, o4;
  o4.num_threads = 4;
  lm_minimize(blocks, x1, BoxConstraints::none(4), o1);
  lm_minimize(blocks, x2, BoxConstraints::none(4), o4);
  CHECK(x1 == x2);
}

TEST_CASE("check_jacobian: exact, wrong and non-finite Jacobians") {
  std::mt19937 rng(8);
  std::normal_distribution<double> n(0.0, 1.0);
  MatX A(6, 3);
  VecX b(6);
  for (int i = 0; i < A.size(); ++i) A.data()[i] = n(rng);
  for (int i = 0; i < b.size(); ++i) b[i] = n(rng);
  const VecX x = VecX::Random(3);
  CHECK(check_jacobian(linear_block(A, b), x) < 1e-9);

  MatX wrong = A;
  wrong.col(1) *= 1.5;
  wrong.col(1).array() += 0.1;
  auto bad = linear_block(A, b);
  bad.evaluate = [A, b, wrong](const VecX& x, VecX& r, MatX* J) {
    r = A * x - b;
    if (J) *J = wrong;
  };
  CHECK(check_jacobian(bad, x) > 1e-2);

  auto nan = linear_block(A, b);
  nan.evaluate = [](const VecX&, VecX& r, MatX* J) {
    r.setConstant(std::numeric_limits<double>::infinity());
    if (J) J->setZero();
  };
  CHECK(std::isinf(check_jacobian(nan, x)));
}
