#ifndef DOPF_LOCAL_SOLVER_HPP
#define DOPF_LOCAL_SOLVER_HPP

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "dopf/interior_point.hpp"
#include "dopf/types.hpp"

namespace dopf {

enum class ProxMetric { coupling, scaled_identity };

/// A region subproblem augmented with the dual linear term and the proximal
/// penalty used by the coordination engines:
///   f_i(x) + c^T x + (rho/2) (x - z)^T P (x - z),
/// with P = A_i^T A_i (coupling) or diag(Sigma_i) (scaled_identity).
struct AugmentedLocalProblem {
  const Subproblem* base = nullptr;
  Vector linear_term;   // c, typically A_i^T lambda
  Vector prox_center;   // z_i^k
  double prox_weight = 0.0;
  ProxMetric prox_metric = ProxMetric::coupling;
};

struct LocalSolveResult {
  Vector x_opt;
  Vector eq_duals;
  Vector ineq_duals;
  Vector bound_duals_lower;
  Vector bound_duals_upper;
  SolveStatus status = SolveStatus::max_iter;
  int iterations = 0;
  double stationarity = 0.0;
  double feasibility = 0.0;
};

struct SensitivityPack {
  Matrix B;  // positive definite after eigenvalue flooring
  Vector g;
  Matrix C;  // Jacobian rows of active constraints
};

namespace detail {

inline SparseMatrix prox_matrix(const AugmentedLocalProblem& p) {
  const Subproblem& s = *p.base;
  if (p.prox_metric == ProxMetric::coupling) {
    SparseMatrix At = s.A.transpose();
    return SparseMatrix(At * s.A);
  }
  std::vector<Triplet> trips;
  for (int j = 0; j < s.n_xi; ++j) trips.emplace_back(j, j, s.scaling_diag[j]);
  SparseMatrix P(s.n_xi, s.n_xi);
  P.setFromTriplets(trips.begin(), trips.end());
  return P;
}

inline SmoothFunction augmented_objective(const AugmentedLocalProblem& p,
                                          const SparseMatrix& P) {
  const Subproblem& s = *p.base;
  const double rho = p.prox_weight;
  const Vector c = p.linear_term;
  const Vector z = p.prox_center;
  // For the coupling metric, evaluate the prox term through A itself:
  // rho A^T (A d) keeps the rounding noise of the product inside range(A^T),
  // where the curvature is rho, so Newton steps stay on the float grid even
  // for rho ~ 1e12. Forming (A^T A) d instead leaks O(rho*eps) noise into the
  // null space of A, where the curvature is O(1), and the iterates chatter.
  const bool through_A = p.prox_metric == ProxMetric::coupling;
  const SparseMatrix A = s.A;
  SmoothFunction base = s.objective;
  SmoothFunction f;
  f.dim_in = s.n_xi;
  f.dim_out = 1;
  f.eval = [base, c, z, rho, P, A, through_A](const Vector& x) {
    Vector v = base.eval(x);
    Vector d = x - z;
    if (through_A)
      v[0] += c.dot(x) + 0.5 * rho * (A * d).squaredNorm();
    else
      v[0] += c.dot(x) + 0.5 * rho * d.dot(P * d);
    return v;
  };
  f.jacobian = [base, c, z, rho, P, A, through_A](const Vector& x) {
    SparseMatrix j = base.jacobian(x);
    Vector extra = through_A ? Vector(c + rho * (A.transpose() * (A * (x - z))))
                             : Vector(c + rho * (P * (x - z)));
    Matrix dense = Matrix(j) + extra.transpose();
    return SparseMatrix(dense.sparseView());
  };
  f.hessian_vlp = [base, rho, P](const Vector& x, const Vector& w) {
    SparseMatrix h = base.hessian_vlp(x, w);
    return SparseMatrix(h + w[0] * rho * P);
  };
  return f;
}

}  // namespace detail

struct LocalSolverOptions {
  IpOptions ip;
};

/// Solve one augmented region subproblem (Eq. 2 / ALADIN Step 1).
inline LocalSolveResult solve_local(const AugmentedLocalProblem& p,
                                    const Vector& warm_start,
                                    const LocalSolverOptions& opt = {}) {
  const Subproblem& s = *p.base;
  if (!(p.prox_weight >= 0.0))
    throw InputError("solve_local: prox_weight must be nonnegative");
  if (p.prox_center.size() != s.n_xi || warm_start.size() != s.n_xi ||
      p.linear_term.size() != s.n_xi)
    throw InputError("solve_local: vector length mismatch");

  SparseMatrix P = detail::prox_matrix(p);
  NlpProblem nlp;
  nlp.n = s.n_xi;
  nlp.objective = detail::augmented_objective(p, P);
  nlp.eq = s.eq_constraints;
  nlp.ineq = s.ineq_constraints;
  nlp.lower = s.lower;
  nlp.upper = s.upper;

  // Prox-dominated warm starts: the augmented Hessian carries curvature
  // ~ rho ||P||, so any stationarity residual below ~eps * rho * ||P|| is
  // indistinguishable from an exact optimum at gradient granularity. If the
  // warm start is feasible and its least-squares KKT residual sits below that
  // resolution, keep the point bitwise instead of letting the interior-point
  // solver re-converge and sprinkle O(eps * curvature) noise over it.
  if (p.prox_weight > 0.0) {
    double curv = 0.0;
    {
      SparseMatrix H = nlp.objective.hessian_vlp(warm_start, Vector::Ones(1));
      for (int c = 0; c < H.outerSize(); ++c)
        for (SparseMatrix::InnerIterator it(H, c); it; ++it)
          curv = std::max(curv, std::abs(it.value()));
    }
    const double eps_m = std::numeric_limits<double>::epsilon();
    double floor = 20.0 * eps_m * (1.0 + curv) *
                   (1.0 + warm_start.lpNorm<Eigen::Infinity>());
    if (floor > opt.ip.tol) {
      // A constraint whose multiplier is active at the optimum is left at a
      // barrier-standoff distance ~mu by the interior-point solver, so the
      // activity tolerance here must be much looser than the feasibility one.
      const double active_tol = 1e-4;
      double feas = 0.0;
      if (s.eq_constraints.dim_out > 0)
        feas = s.eq_constraints.eval(warm_start).lpNorm<Eigen::Infinity>();
      Vector h;
      if (s.ineq_constraints.dim_out > 0) {
        h = s.ineq_constraints.eval(warm_start);
        feas = std::max(feas, h.maxCoeff());
      }
      for (int j = 0; j < s.n_xi; ++j) {
        if (std::isfinite(s.lower[j]))
          feas = std::max(feas, s.lower[j] - warm_start[j]);
        if (std::isfinite(s.upper[j]))
          feas = std::max(feas, warm_start[j] - s.upper[j]);
      }
      // The gate is deliberately tighter than the solver's feasibility
      // tolerance: a frozen iterate inherits the consensus step's drift, so
      // the region must wake and re-project well before the accumulated
      // violation becomes visible at the 1e-6 reporting level.
      if (feas <= 2.5e-7) {
        Vector g0 = Matrix(nlp.objective.jacobian(warm_start)).row(0);
        // Row set and slot bookkeeping for the least-squares multiplier fit;
        // the fitted values are returned as the duals so that sensitivity
        // extraction sees a consistent Lagrangian.
        std::vector<Vector> rows;
        std::vector<int> ineq_idx, bnd_idx;
        if (s.eq_constraints.dim_out > 0) {
          Matrix jg = Matrix(s.eq_constraints.jacobian(warm_start));
          for (int j = 0; j < jg.rows(); ++j) rows.push_back(jg.row(j));
        }
        if (s.ineq_constraints.dim_out > 0) {
          Matrix jh = Matrix(s.ineq_constraints.jacobian(warm_start));
          for (int j = 0; j < jh.rows(); ++j)
            if (h[j] >= -active_tol) {
              ineq_idx.push_back(j);
              rows.push_back(jh.row(j));
            }
        }
        for (int j = 0; j < s.n_xi; ++j) {
          bool lo = std::isfinite(s.lower[j]) &&
                    warm_start[j] - s.lower[j] <= active_tol;
          bool hi = std::isfinite(s.upper[j]) &&
                    s.upper[j] - warm_start[j] <= active_tol;
          if (lo || hi) {
            Vector e = Vector::Zero(s.n_xi);
            e[j] = 1.0;
            bnd_idx.push_back(hi ? j : -(j + 1));  // sign marks upper vs lower
            rows.push_back(e);
          }
        }
        double resid;
        Vector y(static_cast<int>(rows.size()));
        if (rows.empty()) {
          resid = g0.lpNorm<Eigen::Infinity>();
        } else {
          Matrix Mt(s.n_xi, static_cast<int>(rows.size()));
          for (size_t j = 0; j < rows.size(); ++j) Mt.col(j) = rows[j];
          y = Mt.completeOrthogonalDecomposition().solve(-g0);
          // Judge the residual with sign-feasible multipliers: a near-active
          // row may only "explain" the gradient with an inadmissible sign, and
          // such a point must not be frozen.
          Vector yc = y;
          int at = s.eq_constraints.dim_out + static_cast<int>(ineq_idx.size());
          for (size_t j = 0; j < ineq_idx.size(); ++j) {
            int c = s.eq_constraints.dim_out + static_cast<int>(j);
            yc[c] = std::max(0.0, y[c]);
          }
          for (size_t j = 0; j < bnd_idx.size(); ++j) {
            int c = at + static_cast<int>(j);
            yc[c] = bnd_idx[j] >= 0 ? std::max(0.0, y[c]) : std::min(0.0, y[c]);
          }
          y = yc;
          resid = (g0 + Mt * y).lpNorm<Eigen::Infinity>();
        }
        if (resid <= floor) {
          LocalSolveResult out;
          out.x_opt = warm_start;
          out.eq_duals = Vector::Zero(s.eq_constraints.dim_out);
          out.ineq_duals = Vector::Zero(s.ineq_constraints.dim_out);
          out.bound_duals_lower = Vector::Zero(s.n_xi);
          out.bound_duals_upper = Vector::Zero(s.n_xi);
          int at = 0;
          for (int j = 0; j < s.eq_constraints.dim_out; ++j)
            out.eq_duals[j] = y[at++];
          for (int j : ineq_idx) out.ineq_duals[j] = std::max(0.0, y[at++]);
          for (int tag : bnd_idx) {
            double v = y[at++];
            if (tag >= 0)
              out.bound_duals_upper[tag] = std::max(0.0, v);
            else
              out.bound_duals_lower[-(tag + 1)] = std::max(0.0, -v);
          }
          out.status = SolveStatus::optimal;
          out.iterations = 0;
          out.stationarity = resid;
          out.feasibility = feas;
          return out;
        }
      }
    }
  }

  IpResult r = solve_nlp(nlp, warm_start, opt.ip);
  LocalSolveResult out;
  out.x_opt = r.x;
  out.eq_duals = r.eq_duals;
  out.ineq_duals = r.ineq_duals;
  out.bound_duals_lower = r.lower_duals;
  out.bound_duals_upper = r.upper_duals;
  out.status = r.status;
  out.iterations = r.iterations;
  out.stationarity = r.stationarity;
  out.feasibility = r.feasibility;
  return out;
}

/// Floor the eigenvalues of a symmetric matrix at `floor_value`.
inline Matrix eigenvalue_floor(const Matrix& sym, double floor_value) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (sym + sym.transpose()));
  Vector ev = es.eigenvalues().cwiseMax(floor_value);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// Replace the eigenvalues of a symmetric matrix by max(|ev|, floor_value).
/// Unlike plain flooring this keeps the *magnitude* of negative curvature,
/// which matters when the multipliers behind it are themselves large.
inline Matrix eigenvalue_mirror(const Matrix& sym, double floor_value) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (sym + sym.transpose()));
  Vector ev = es.eigenvalues().cwiseAbs().cwiseMax(floor_value);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

/// ALADIN Step 2: exact Lagrangian Hessian of the *base* subproblem with an
/// eigenvalue floor, base objective gradient, and active-constraint Jacobian
/// (all equality rows, inequality rows within active_tol, active bound rows).
/// How the (possibly indefinite) Lagrangian Hessian is convexified:
/// floor_local floors the eigenvalues with the local solve's multipliers,
/// mirror_local takes |eigenvalue| instead (keeps the size of negative
/// curvature), floor_refit floors after refitting the multipliers from the
/// unproxed stationarity condition.
enum class HessianMode { floor_local, mirror_local, floor_refit };

inline SensitivityPack extract_sensitivities(
    const AugmentedLocalProblem& p, const LocalSolveResult& r,
    double active_tol = 1e-6, double hessian_floor = 1e-6,
    HessianMode mode = HessianMode::floor_local) {
  const Subproblem& s = *p.base;
  if (r.status != SolveStatus::optimal)
    throw InputError("extract_sensitivities: local solve was not optimal");
  const Vector& x = r.x_opt;

  // Activity is judged primal-dually: an interior-point solve parks active
  // constraints at a barrier-standoff distance that can exceed active_tol, but
  // their multipliers are then far from zero. Missing such a row would leave
  // its gradient contribution unmodeled in the coordination QP, which then
  // runs away along the corresponding low-curvature direction. The dual
  // threshold is coarse on purpose: rows with near-zero multipliers add
  // nothing to the gradient balance but pile up near-dependent rows.
  const double dual_tol = std::max(1e-3, active_tol);
  std::vector<Vector> rows;
  std::vector<int> ineq_rows;  // row index in C of each kept inequality
  if (s.eq_constraints.dim_out > 0) {
    Matrix jg = Matrix(s.eq_constraints.jacobian(x));
    for (int j = 0; j < jg.rows(); ++j) rows.push_back(jg.row(j));
  }
  if (s.ineq_constraints.dim_out > 0) {
    Vector h = s.ineq_constraints.eval(x);
    Matrix jh = Matrix(s.ineq_constraints.jacobian(x));
    for (int j = 0; j < jh.rows(); ++j)
      if (std::abs(h[j]) <= active_tol || r.ineq_duals[j] > dual_tol) {
        ineq_rows.push_back(j);
        rows.push_back(jh.row(j));
      }
  }
  for (int j = 0; j < s.n_xi; ++j) {
    bool lo = std::isfinite(s.lower[j]) &&
              (x[j] - s.lower[j] <= active_tol ||
               r.bound_duals_lower[j] > dual_tol);
    bool hi = std::isfinite(s.upper[j]) &&
              (s.upper[j] - x[j] <= active_tol ||
               r.bound_duals_upper[j] > dual_tol);
    if (lo || hi) {
      Vector e = Vector::Zero(s.n_xi);
      e[j] = 1.0;
      rows.push_back(e);
    }
  }

  SensitivityPack pack;
  pack.C = Matrix(static_cast<int>(rows.size()), s.n_xi);
  for (size_t j = 0; j < rows.size(); ++j) pack.C.row(j) = rows[j];
  pack.g = Matrix(s.objective.jacobian(x)).row(0).transpose();

  // Hessian multipliers. The local solve's own duals absorb the proximal
  // term rho Sigma (x - z): far from consensus they are O(rho * |x - z|),
  // orders of magnitude beyond the multipliers of the underlying subproblem,
  // and the resulting "Lagrangian" curvature is noise. When requested, refit
  // the multipliers from the stationarity of the *unproxed* Lagrangian,
  //   grad f(x) + tilt + C^T kappa ~ 0,
  // which agrees with the local duals once x settles (the prox term vanishes)
  // but stays bounded by the data scale elsewhere.
  Vector eq_w = r.eq_duals, ineq_w = r.ineq_duals;
  if (mode == HessianMode::floor_refit) {
    Vector g0 = pack.g;
    if (p.linear_term.size() > 0) g0 += p.linear_term;
    if (pack.C.rows() > 0) {
      Vector kappa = Matrix(pack.C.transpose())
                         .completeOrthogonalDecomposition()
                         .solve(Vector(-g0));
      eq_w = kappa.head(s.eq_constraints.dim_out);
      ineq_w = Vector::Zero(std::max(0, s.ineq_constraints.dim_out));
      for (size_t j = 0; j < ineq_rows.size(); ++j)
        ineq_w[ineq_rows[j]] = kappa[s.eq_constraints.dim_out +
                                     static_cast<int>(j)];
    } else {
      eq_w = Vector::Zero(std::max(0, s.eq_constraints.dim_out));
      ineq_w = Vector::Zero(std::max(0, s.ineq_constraints.dim_out));
    }
  }

  SparseMatrix H = s.objective.hessian_vlp(x, Vector::Ones(1));
  if (s.eq_constraints.dim_out > 0)
    H = H + s.eq_constraints.hessian_vlp(x, eq_w);
  if (s.ineq_constraints.dim_out > 0)
    H = H + s.ineq_constraints.hessian_vlp(x, ineq_w);
  pack.B = mode == HessianMode::mirror_local
               ? eigenvalue_mirror(Matrix(H), hessian_floor)
               : eigenvalue_floor(Matrix(H), hessian_floor);
  return pack;
}

}  // namespace dopf

#endif  // DOPF_LOCAL_SOLVER_HPP
