#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dopf/interior_point.hpp"
#include "dopf/least_squares.hpp"
#include "test_helpers.hpp"

using namespace dopf;
using namespace dopf::testing;

namespace {

NlpProblem free_problem(const SmoothFunction& obj) {
  NlpProblem p;
  p.n = obj.dim_in;
  p.objective = obj;
  p.eq = empty_function(p.n);
  p.ineq = empty_function(p.n);
  p.lower = Vector::Constant(p.n, -kInf);
  p.upper = Vector::Constant(p.n, kInf);
  return p;
}

}  // namespace

TEST_CASE("unconstrained quadratic: min 1/2 x^2 + x") {
  NlpProblem p = free_problem(
      quadratic(Matrix::Identity(1, 1), Vector::Constant(1, 1.0)));
  IpResult r = solve_nlp(p, Vector::Zero(1));
  CHECK(r.status == SolveStatus::optimal);
  CHECK(r.x[0] == doctest::Approx(-1.0).epsilon(1e-7));
}

TEST_CASE("equality-constrained QP with exact multipliers") {
  // min 1/2 ||x||^2 s.t. x1 + x2 = 2 -> x = (1,1), lambda = -1
  NlpProblem p = free_problem(quadratic(Matrix::Identity(2, 2), Vector::Zero(2)));
  Matrix M(1, 2);
  M << 1.0, 1.0;
  Vector d(1);
  d << -2.0;
  p.eq = linear_map(M, d);
  IpResult r = solve_nlp(p, Vector::Zero(2));
  CHECK(r.status == SolveStatus::optimal);
  CHECK(r.x[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(r.x[1] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(r.eq_duals[0] == doctest::Approx(-1.0).epsilon(1e-8));
  CHECK(r.stationarity <= 1e-8);
  CHECK(r.feasibility <= 1e-8);
}

TEST_CASE("circle: min x1 + x2 s.t. x1^2 + x2^2 <= 1") {
  NlpProblem p = free_problem(
      quadratic(Matrix::Zero(2, 2), Vector::Ones(2)));
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
  p.ineq = h;
  IpResult r = solve_nlp(p, Vector::Zero(2));
  CHECK(r.status == SolveStatus::optimal);
  const double root_half = std::sqrt(0.5);
  CHECK(r.x[0] == doctest::Approx(-root_half).epsilon(1e-7));
  CHECK(r.x[1] == doctest::Approx(-root_half).epsilon(1e-7));
  CHECK(r.ineq_duals[0] == doctest::Approx(root_half).epsilon(1e-6));
  // complementarity at solver tolerance
  double hval = r.x.squaredNorm() - 1.0;
  CHECK(std::abs(r.ineq_duals[0] * hval) <= 1e-6);
}

TEST_CASE("active lower bound with multiplier") {
  // min x s.t. x >= 2
  NlpProblem p = free_problem(
      quadratic(Matrix::Zero(1, 1), Vector::Ones(1)));
  p.lower[0] = 2.0;
  IpResult r = solve_nlp(p, Vector::Constant(1, 5.0));
  CHECK(r.status == SolveStatus::optimal);
  CHECK(r.x[0] == doctest::Approx(2.0).epsilon(1e-8));
  CHECK(r.lower_duals[0] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("nonconvex objective ends at a bound via inertia correction") {
  // min -1/2 x^2 on [-1, 2]
  NlpProblem p = free_problem(
      quadratic(-Matrix::Identity(1, 1), Vector::Zero(1)));
  p.lower[0] = -1.0;
  p.upper[0] = 2.0;
  IpResult r = solve_nlp(p, Vector::Constant(1, 0.5));
  CHECK(r.status == SolveStatus::optimal);
  CHECK(r.x[0] == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("determinism: identical inputs give bitwise-identical solutions") {
  std::mt19937 rng(11);
  auto qp = random_coupled_qp(rng, 1, 2, 4);
  NlpProblem p = free_problem(qp.problem.regions[0].objective);
  p.lower = Vector::Constant(4, -0.5);
  p.upper = Vector::Constant(4, 0.5);
  IpResult a = solve_nlp(p, Vector::Zero(4));
  IpResult b = solve_nlp(p, Vector::Zero(4));
  REQUIRE(a.status == SolveStatus::optimal);
  CHECK(a.x == b.x);
  CHECK(a.eq_duals == b.eq_duals);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("constrained least squares: linear residual") {
  Matrix M(1, 1);
  M << 1.0;
  Vector d(1);
  d << -3.0;
  auto res = solve_constrained_least_squares(
      linear_map(M, d), Vector::Zero(1), Vector::Constant(1, 10.0),
      Vector::Zero(1));
  CHECK(res.converged);
  CHECK(res.x[0] == doctest::Approx(3.0).epsilon(1e-8));
}

TEST_CASE("constrained least squares: analytic root in box") {
  SmoothFunction f;
  f.dim_in = 1;
  f.dim_out = 1;
  f.eval = [](const Vector& x) {
    return Vector::Constant(1, x[0] * x[0] - 4.0);
  };
  f.jacobian = [](const Vector& x) {
    return SparseMatrix(Matrix(2.0 * x.transpose()).sparseView());
  };
  f.hessian_vlp = [](const Vector&, const Vector& w) {
    return SparseMatrix((2.0 * w[0] * Matrix::Identity(1, 1)).sparseView());
  };
  auto res = solve_constrained_least_squares(
      f, Vector::Zero(1), Vector::Constant(1, 10.0), Vector::Constant(1, 1.0));
  CHECK(res.converged);
  CHECK(res.x[0] == doctest::Approx(2.0).epsilon(1e-8));
}

TEST_CASE("constrained least squares reports non-convergence honestly") {
  // residual x - 3 boxed to [0, 1]: best point 1, residual 2
  Matrix M(1, 1);
  M << 1.0;
  Vector d(1);
  d << -3.0;
  auto res = solve_constrained_least_squares(
      linear_map(M, d), Vector::Zero(1), Vector::Ones(1), Vector::Zero(1));
  CHECK_FALSE(res.converged);
  CHECK(res.residual_inf == doctest::Approx(2.0).epsilon(1e-6));
}
