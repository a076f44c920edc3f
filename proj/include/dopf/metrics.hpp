#ifndef DOPF_METRICS_HPP
#define DOPF_METRICS_HPP

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "dopf/types.hpp"

namespace dopf {

/// ||sum_i A_i x_i||_inf
inline double consensus_gap(const PartitionedProblem& p,
                            const std::vector<Vector>& x) {
  check_region_dims(p, x, "consensus_gap");
  Vector r = Vector::Zero(p.n_c);
  for (int i = 0; i < p.num_regions(); ++i) r += p.regions[i].A * x[i];
  return p.n_c == 0 ? 0.0 : r.lpNorm<Eigen::Infinity>();
}

/// Max over regions of equality, inequality and bound violation at z.
inline double constraint_violation(const PartitionedProblem& p,
                                   const std::vector<Vector>& z) {
  check_region_dims(p, z, "constraint_violation");
  double v = 0.0;
  for (int i = 0; i < p.num_regions(); ++i) {
    const Subproblem& r = p.regions[i];
    const std::string where = "region " + std::to_string(i);
    if (r.eq_constraints.dim_out > 0) {
      Vector g = r.eq_constraints.eval(z[i]);
      require_finite(g, "eq_constraints of " + where);
      v = std::max(v, g.lpNorm<Eigen::Infinity>());
    }
    if (r.ineq_constraints.dim_out > 0) {
      Vector h = r.ineq_constraints.eval(z[i]);
      require_finite(h, "ineq_constraints of " + where);
      v = std::max(v, h.cwiseMax(0.0).lpNorm<Eigen::Infinity>());
    }
    for (int j = 0; j < r.n_xi; ++j) {
      v = std::max(v, r.lower[j] - z[i][j]);
      v = std::max(v, z[i][j] - r.upper[j]);
    }
  }
  return v;
}

/// Multipliers for the full problem (1): consensus rows plus every local
/// constraint block, bound multipliers included.
struct FullDuals {
  Vector lambda;                 // consensus rows, length n_c
  std::vector<Vector> eq;        // per region
  std::vector<Vector> ineq;      // per region, >= 0
  std::vector<Vector> bound_lower;  // per region, >= 0
  std::vector<Vector> bound_upper;  // per region, >= 0
};

struct KktResidual {
  double stationarity = 0.0;
  double primal = 0.0;
  double complementarity = 0.0;
};

/// Infinity norms of the KKT residual blocks of the full coupled problem.
inline KktResidual kkt_residual(const PartitionedProblem& p,
                                const std::vector<Vector>& x,
                                const FullDuals& d) {
  check_region_dims(p, x, "kkt_residual");
  if (d.lambda.size() != p.n_c)
    throw InputError("kkt_residual: lambda length != n_c");
  KktResidual res;
  res.primal = std::max(consensus_gap(p, x), constraint_violation(p, x));
  for (int i = 0; i < p.num_regions(); ++i) {
    const Subproblem& r = p.regions[i];
    const std::string where = "region " + std::to_string(i);
    Vector grad = Vector(r.objective.jacobian(x[i]).transpose()).col(0);
    require_finite(grad, "objective gradient of " + where);
    Vector stat = grad + r.A.transpose() * d.lambda;
    if (r.eq_constraints.dim_out > 0)
      stat += r.eq_constraints.jacobian(x[i]).transpose() * d.eq[i];
    if (r.ineq_constraints.dim_out > 0) {
      Vector h = r.ineq_constraints.eval(x[i]);
      stat += r.ineq_constraints.jacobian(x[i]).transpose() * d.ineq[i];
      for (int j = 0; j < r.ineq_constraints.dim_out; ++j)
        res.complementarity =
            std::max(res.complementarity, std::abs(d.ineq[i][j] * h[j]));
    }
    if (d.bound_lower.size() > static_cast<size_t>(i)) {
      stat -= d.bound_lower[i];
      stat += d.bound_upper[i];
      for (int j = 0; j < r.n_xi; ++j) {
        if (std::isfinite(r.lower[j]))
          res.complementarity = std::max(
              res.complementarity,
              std::abs(d.bound_lower[i][j] * (x[i][j] - r.lower[j])));
        if (std::isfinite(r.upper[j]))
          res.complementarity = std::max(
              res.complementarity,
              std::abs(d.bound_upper[i][j] * (r.upper[j] - x[i][j])));
      }
    }
    require_finite(stat, "stationarity of " + where);
    res.stationarity =
        std::max(res.stationarity, stat.lpNorm<Eigen::Infinity>());
  }
  return res;
}

/// Least-squares fit of a single consensus multiplier and local multipliers
/// to the stationarity system at x. Used to measure how far a frozen iterate
/// is from a KKT point of the coupled problem; inequality and bound rows are
/// restricted to the active set.
inline double stationarity_gap(const PartitionedProblem& p,
                               const std::vector<Vector>& x,
                               double active_tol = 1e-6) {
  check_region_dims(p, x, "stationarity_gap");
  // Columns: lambda (n_c), then per-region local multipliers.
  int cols = p.n_c;
  std::vector<int> offs(p.num_regions());
  std::vector<Matrix> jloc(p.num_regions());
  std::vector<Vector> grads(p.num_regions());
  for (int i = 0; i < p.num_regions(); ++i) {
    const Subproblem& r = p.regions[i];
    grads[i] = Vector(r.objective.jacobian(x[i]).transpose()).col(0);
    std::vector<Vector> rows;
    if (r.eq_constraints.dim_out > 0) {
      Matrix jg = Matrix(r.eq_constraints.jacobian(x[i]));
      for (int j = 0; j < jg.rows(); ++j) rows.push_back(jg.row(j));
    }
    if (r.ineq_constraints.dim_out > 0) {
      Vector h = r.ineq_constraints.eval(x[i]);
      Matrix jh = Matrix(r.ineq_constraints.jacobian(x[i]));
      for (int j = 0; j < jh.rows(); ++j)
        if (std::abs(h[j]) <= active_tol) rows.push_back(jh.row(j));
    }
    for (int j = 0; j < r.n_xi; ++j) {
      bool lo = std::isfinite(r.lower[j]) && x[i][j] - r.lower[j] <= active_tol;
      bool hi = std::isfinite(r.upper[j]) && r.upper[j] - x[i][j] <= active_tol;
      if (lo || hi) {
        Vector e = Vector::Zero(r.n_xi);
        e[j] = 1.0;
        rows.push_back(e);
      }
    }
    jloc[i] = Matrix(static_cast<int>(rows.size()), r.n_xi);
    for (size_t j = 0; j < rows.size(); ++j) jloc[i].row(j) = rows[j];
    offs[i] = cols;
    cols += jloc[i].rows();
  }
  int total_rows = 0;
  for (int i = 0; i < p.num_regions(); ++i) total_rows += p.regions[i].n_xi;
  Matrix J = Matrix::Zero(total_rows, cols);
  Vector b(total_rows);
  int row0 = 0;
  for (int i = 0; i < p.num_regions(); ++i) {
    const Subproblem& r = p.regions[i];
    J.block(row0, 0, r.n_xi, p.n_c) = Matrix(r.A.transpose());
    J.block(row0, offs[i], r.n_xi, jloc[i].rows()) = jloc[i].transpose();
    b.segment(row0, r.n_xi) = -grads[i];
    row0 += r.n_xi;
  }
  Vector mult = J.completeOrthogonalDecomposition().solve(b);
  return (J * mult - b).lpNorm<Eigen::Infinity>();
}

}  // namespace dopf

#endif  // DOPF_METRICS_HPP
