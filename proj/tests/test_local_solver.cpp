#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dopf/local_solver.hpp"
#include "test_helpers.hpp"

using namespace dopf;
using namespace dopf::testing;

TEST_CASE("analytic minimizer: min 1/2 x^2 + x, rho = 0") {
  Subproblem s = unconstrained_region(
      quadratic(Matrix::Identity(1, 1), Vector::Zero(1)), SparseMatrix(1, 1));
  AugmentedLocalProblem p;
  p.base = &s;
  p.linear_term = Vector::Ones(1);  // lambda = 1 through A = [1]
  p.prox_center = Vector::Zero(1);
  p.prox_weight = 0.0;
  p.prox_metric = ProxMetric::coupling;
  LocalSolveResult r = solve_local(p, Vector::Zero(1));
  CHECK(r.status == SolveStatus::optimal);
  CHECK(r.x_opt[0] == doctest::Approx(-1.0).epsilon(1e-7));
}

TEST_CASE("prox dominates: f = 0, large rho pins x to the center") {
  Matrix A(1, 1);
  A << 1.0;
  Subproblem s = unconstrained_region(
      quadratic(Matrix::Zero(1, 1), Vector::Zero(1)), dense_to_sparse(A));
  AugmentedLocalProblem p;
  p.base = &s;
  p.linear_term = Vector::Zero(1);
  p.prox_center = Vector::Constant(1, 0.7);
  p.prox_weight = 1e6;
  p.prox_metric = ProxMetric::coupling;
  LocalSolveResult r = solve_local(p, Vector::Zero(1));
  CHECK(r.status == SolveStatus::optimal);
  CHECK(std::abs(r.x_opt[0] - 0.7) <= 1e-6);
}

TEST_CASE("hand KKT: min x1 + x2 s.t. x1^2 + x2^2 <= 1") {
  Subproblem s = unconstrained_region(
      quadratic(Matrix::Zero(2, 2), Vector::Ones(2)), SparseMatrix(1, 2));
  SmoothFunction h;
  h.dim_in = 2;
  h.dim_out = 1;
  h.eval = [](const Vector& x) {
    return Vector::Constant(1, x.squaredNorm() - 1.0);
  };
  h.jacobian = [](const Vector& x) {
    return SparseMatrix(Matrix(2.0 * x.transpose()).sparseView());
  };
  h.hessian_vlp = [](const Vector&, const Vector& w) {
    return SparseMatrix((2.0 * w[0] * Matrix::Identity(2, 2)).sparseView());
  };
  s.ineq_constraints = h;
  AugmentedLocalProblem p;
  p.base = &s;
  p.linear_term = Vector::Zero(2);
  p.prox_center = Vector::Zero(2);
  p.prox_weight = 0.0;
  LocalSolveResult r = solve_local(p, Vector::Zero(2));
  REQUIRE(r.status == SolveStatus::optimal);
  const double rh = std::sqrt(0.5);
  CHECK(r.x_opt[0] == doctest::Approx(-rh).epsilon(1e-7));
  CHECK(r.ineq_duals[0] == doctest::Approx(rh).epsilon(1e-6));

  SUBCASE("active-constraint Jacobian at the solution") {
    SensitivityPack pack = extract_sensitivities(p, r, 1e-6);
    REQUIRE(pack.C.rows() == 1);
    CHECK(pack.C(0, 0) == doctest::Approx(2.0 * r.x_opt[0]).epsilon(1e-9));
    CHECK(pack.C(0, 1) == doctest::Approx(2.0 * r.x_opt[1]).epsilon(1e-9));
  }
}

TEST_CASE("exact Hessian for PD quadratic, empty C") {
  Matrix Q(2, 2);
  Q << 3.0, 1.0, 1.0, 2.0;
  Subproblem s = unconstrained_region(quadratic(Q, Vector::Ones(2)),
                                      SparseMatrix(1, 2));
  AugmentedLocalProblem p;
  p.base = &s;
  p.linear_term = Vector::Zero(2);
  p.prox_center = Vector::Zero(2);
  p.prox_weight = 0.0;
  LocalSolveResult r = solve_local(p, Vector::Zero(2));
  REQUIRE(r.status == SolveStatus::optimal);
  SensitivityPack pack = extract_sensitivities(p, r);
  CHECK((pack.B - Q).lpNorm<Eigen::Infinity>() <= 1e-10);
  CHECK(pack.C.rows() == 0);
  CHECK((pack.g - (Q * r.x_opt + Vector::Ones(2))).lpNorm<Eigen::Infinity>() <=
        1e-10);
}

TEST_CASE("eigenvalue flooring of an indefinite Hessian") {
  Matrix H(2, 2);
  H << 1.0, 0.0, 0.0, -1.0;
  Matrix floored = eigenvalue_floor(H, 1e-6);
  CHECK(floored(0, 0) == doctest::Approx(1.0));
  CHECK(floored(1, 1) == doctest::Approx(1e-6));
  CHECK(std::abs(floored(0, 1)) <= 1e-12);
}

TEST_CASE("admm local objective by hand: f = x^2/2, A=[1], z=0, lambda=1, rho=1") {
  Matrix A(1, 1);
  A << 1.0;
  Subproblem s = unconstrained_region(
      quadratic(Matrix::Identity(1, 1), Vector::Zero(1)), dense_to_sparse(A));
  AugmentedLocalProblem p;
  p.base = &s;
  p.linear_term = Vector::Ones(1);
  p.prox_center = Vector::Zero(1);
  p.prox_weight = 1.0;
  p.prox_metric = ProxMetric::coupling;
  LocalSolveResult r = solve_local(p, Vector::Zero(1));
  CHECK(r.x_opt[0] == doctest::Approx(-0.5).epsilon(1e-9));
}

TEST_CASE("aladin local objective by hand with scaled-identity prox") {
  Matrix A(1, 1);
  A << 1.0;
  Subproblem s = unconstrained_region(
      quadratic(Matrix::Identity(1, 1), Vector::Zero(1)), dense_to_sparse(A));
  AugmentedLocalProblem p;
  p.base = &s;
  p.prox_center = Vector::Ones(1);
  p.prox_weight = 1.0;
  p.prox_metric = ProxMetric::scaled_identity;

  p.linear_term = Vector::Zero(1);  // min x^2/2 + (x-1)^2/2 -> 1/2
  LocalSolveResult r = solve_local(p, Vector::Zero(1));
  CHECK(r.x_opt[0] == doctest::Approx(0.5).epsilon(1e-9));

  p.linear_term = Vector::Ones(1);  // + x -> 0
  r = solve_local(p, Vector::Zero(1));
  CHECK(std::abs(r.x_opt[0]) <= 1e-9);
}

TEST_CASE("monotone prox: coupling distance nonincreasing in rho") {
  std::mt19937 rng(5);
  auto qp = random_coupled_qp(rng, 1, 2, 3);
  Subproblem s = qp.problem.regions[0];
  AugmentedLocalProblem p;
  p.base = &s;
  p.linear_term = s.A.transpose() * Vector::Constant(2, 0.3);
  p.prox_center = Vector::Constant(3, 0.25);
  p.prox_metric = ProxMetric::coupling;
  double prev = kInf;
  for (double rho : {1e2, 1e4, 1e6, 1e8, 1e10, 1e12}) {
    p.prox_weight = rho;
    LocalSolveResult r = solve_local(p, p.prox_center);
    REQUIRE(r.status == SolveStatus::optimal);
    double d = (Matrix(s.A) * (r.x_opt - p.prox_center)).norm();
    CHECK(d <= prev * (1.0 + 1e-9) + 1e-12);
    prev = d;
  }
}

TEST_CASE("deterministic outputs for identical inputs") {
  std::mt19937 rng(9);
  auto qp = random_coupled_qp(rng, 1, 2, 3);
  Subproblem s = qp.problem.regions[0];
  s.lower = Vector::Constant(3, -0.4);
  s.upper = Vector::Constant(3, 0.4);
  AugmentedLocalProblem p;
  p.base = &s;
  p.linear_term = Vector::Constant(3, 0.1);
  p.prox_center = Vector::Zero(3);
  p.prox_weight = 10.0;
  p.prox_metric = ProxMetric::coupling;
  LocalSolveResult a = solve_local(p, Vector::Zero(3));
  LocalSolveResult b = solve_local(p, Vector::Zero(3));
  CHECK(a.x_opt == b.x_opt);
  CHECK(a.eq_duals == b.eq_duals);
  CHECK(a.iterations == b.iterations);
}
