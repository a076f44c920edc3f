#ifndef DOPF_DERIVATIVE_CHECK_HPP
#define DOPF_DERIVATIVE_CHECK_HPP

#include <algorithm>
#include <cmath>

#include "dopf/types.hpp"

namespace dopf {

/// Max relative error of the analytic Jacobian against central differences.
inline double check_jacobian(const SmoothFunction& f, const Vector& x,
                             double step = 1e-6) {
  Matrix jac = Matrix(f.jacobian(x));
  double scale = std::max(1.0, jac.lpNorm<Eigen::Infinity>());
  double err = 0.0;
  Vector xp = x, xm = x;
  for (int j = 0; j < f.dim_in; ++j) {
    double h = step * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    Vector col = (f.eval(xp) - f.eval(xm)) / (2.0 * h);
    err = std::max(err, (col - jac.col(j)).lpNorm<Eigen::Infinity>() / scale);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return err;
}

/// Max relative error of hessian_vlp(x, w) against central differences of
/// the weighted gradient J(x)^T w.
inline double check_hessian(const SmoothFunction& f, const Vector& x,
                            const Vector& w, double step = 1e-6) {
  Matrix hess = Matrix(f.hessian_vlp(x, w));
  double scale = std::max(1.0, hess.lpNorm<Eigen::Infinity>());
  double err = 0.0;
  Vector xp = x, xm = x;
  for (int j = 0; j < f.dim_in; ++j) {
    double h = step * std::max(1.0, std::abs(x[j]));
    xp[j] = x[j] + h;
    xm[j] = x[j] - h;
    Vector gp = f.jacobian(xp).transpose() * w;
    Vector gm = f.jacobian(xm).transpose() * w;
    Vector col = (gp - gm) / (2.0 * h);
    err = std::max(err, (col - hess.col(j)).lpNorm<Eigen::Infinity>() / scale);
    xp[j] = x[j];
    xm[j] = x[j];
  }
  return err;
}

}  // namespace dopf

#endif  // DOPF_DERIVATIVE_CHECK_HPP
