#ifndef DOPF_LEAST_SQUARES_HPP
#define DOPF_LEAST_SQUARES_HPP

#include <cmath>

#include "dopf/interior_point.hpp"
#include "dopf/types.hpp"

namespace dopf {

struct LeastSquaresResult {
  Vector x;
  double residual_inf = 0.0;
  bool converged = false;
  int iterations = 0;
};

/// Minimize (1/2)||R(x)||^2 inside a box. Reports the best point found with
/// its residual norm when the target accuracy is missed; the caller decides.
inline LeastSquaresResult solve_constrained_least_squares(
    const SmoothFunction& residual, const Vector& lower, const Vector& upper,
    const Vector& start, double target_inf = 1e-8, int max_iter = 300) {
  if (residual.dim_out < 1)
    throw InputError("solve_constrained_least_squares: empty residual");
  const int n = residual.dim_in;

  SmoothFunction obj;
  obj.dim_in = n;
  obj.dim_out = 1;
  obj.eval = [residual](const Vector& x) {
    Vector r = residual.eval(x);
    Vector v(1);
    v[0] = 0.5 * r.squaredNorm();
    return v;
  };
  obj.jacobian = [residual](const Vector& x) {
    Vector r = residual.eval(x);
    Vector grad = residual.jacobian(x).transpose() * r;
    return SparseMatrix(Matrix(grad.transpose()).sparseView());
  };
  obj.hessian_vlp = [residual](const Vector& x, const Vector& w) {
    SparseMatrix J = residual.jacobian(x);
    Vector r = residual.eval(x);
    SparseMatrix JtJ = SparseMatrix(SparseMatrix(J.transpose()) * J);
    return SparseMatrix(w[0] * (JtJ + residual.hessian_vlp(x, r)));
  };

  NlpProblem nlp;
  nlp.n = n;
  nlp.objective = obj;
  nlp.eq = empty_function(n);
  nlp.ineq = empty_function(n);
  nlp.lower = lower;
  nlp.upper = upper;

  IpOptions opt;
  opt.tol = 1e-12;
  opt.max_iter = max_iter;
  IpResult r = solve_nlp(nlp, start, opt);

  LeastSquaresResult out;
  out.x = r.x;
  out.iterations = r.iterations;
  out.residual_inf = residual.eval(r.x).lpNorm<Eigen::Infinity>();
  out.converged = out.residual_inf <= target_inf;
  return out;
}

}  // namespace dopf

#endif  // DOPF_LEAST_SQUARES_HPP
