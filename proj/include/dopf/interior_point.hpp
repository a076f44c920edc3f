#ifndef DOPF_INTERIOR_POINT_HPP
#define DOPF_INTERIOR_POINT_HPP

#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <ostream>
#include <vector>

#include "dopf/types.hpp"

namespace dopf {

/// Smooth NLP with equalities, inequalities and box bounds:
///   min f(x)  s.t.  g(x) = 0,  h(x) <= 0,  lower <= x <= upper.
struct NlpProblem {
  int n = 0;
  SmoothFunction objective;
  SmoothFunction eq;
  SmoothFunction ineq;
  Vector lower;
  Vector upper;
};

enum class SolveStatus { optimal, max_iter, infeasible_detected, numerical_failure };

inline const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::optimal: return "optimal";
    case SolveStatus::max_iter: return "max_iter";
    case SolveStatus::infeasible_detected: return "infeasible-detected";
    default: return "numerical-failure";
  }
}

struct IpOptions {
  double tol = 1e-8;
  int max_iter = 200;
  double barrier_init = 0.1;
  double barrier_min_factor = 0.1;  // stop reducing below tol * this
  double bound_frac = 0.99995;      // fraction-to-boundary
  std::ostream* log = nullptr;
};

struct IpResult {
  Vector x;
  Vector eq_duals;     // lambda
  Vector ineq_duals;   // gamma for user h rows, >= 0
  Vector lower_duals;  // bound multipliers, >= 0
  Vector upper_duals;
  SolveStatus status = SolveStatus::max_iter;
  int iterations = 0;
  double objective = 0.0;
  double stationarity = 0.0;
  double feasibility = 0.0;
  double complementarity = 0.0;
};

namespace detail {

struct IneqLayout {
  int nh = 0;                 // user inequality rows
  std::vector<int> upper_ix;  // variables with finite upper bound
  std::vector<int> lower_ix;
  int total() const {
    return nh + static_cast<int>(upper_ix.size() + lower_ix.size());
  }
};

inline IneqLayout make_ineq_layout(const NlpProblem& p) {
  IneqLayout lay;
  lay.nh = p.ineq.dim_out;
  for (int j = 0; j < p.n; ++j) {
    if (std::isfinite(p.upper[j])) lay.upper_ix.push_back(j);
    if (std::isfinite(p.lower[j])) lay.lower_ix.push_back(j);
  }
  return lay;
}

// h_tilde = [h(x); x_u - u; l - x_l]
inline Vector eval_ineq(const NlpProblem& p, const IneqLayout& lay,
                        const Vector& x) {
  Vector h(lay.total());
  if (lay.nh > 0) h.head(lay.nh) = p.ineq.eval(x);
  int k = lay.nh;
  for (int j : lay.upper_ix) h[k++] = x[j] - p.upper[j];
  for (int j : lay.lower_ix) h[k++] = p.lower[j] - x[j];
  return h;
}

inline SparseMatrix ineq_jacobian(const NlpProblem& p, const IneqLayout& lay,
                                  const Vector& x) {
  std::vector<Triplet> trips;
  if (lay.nh > 0) {
    SparseMatrix jh = p.ineq.jacobian(x);
    for (int c = 0; c < jh.outerSize(); ++c)
      for (SparseMatrix::InnerIterator it(jh, c); it; ++it)
        trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                           it.value());
  }
  int k = lay.nh;
  for (int j : lay.upper_ix) trips.emplace_back(k++, j, 1.0);
  for (int j : lay.lower_ix) trips.emplace_back(k++, j, -1.0);
  SparseMatrix J(lay.total(), p.n);
  J.setFromTriplets(trips.begin(), trips.end());
  return J;
}

struct KktFactorization {
  Eigen::SimplicialLDLT<SparseMatrix> ldlt;
  SparseMatrix K;  // the (regularized) matrix that was factored
  double delta_w = 0.0;
  double delta_c = 0.0;
  bool ok = false;

  // Solve with a few rounds of iterative refinement. For ill-conditioned
  // systems (prox weights ~1e12) the raw LDLT solution leaks error into the
  // well-conditioned subspace; refinement confines it again.
  Vector solve(const Vector& rhs) const {
    Vector sol = ldlt.solve(rhs);
    for (int pass = 0; pass < 2; ++pass) {
      Vector resid = rhs - K * sol;
      if (!resid.allFinite()) break;
      Vector corr = ldlt.solve(resid);
      if (!corr.allFinite()) break;
      sol += corr;
    }
    return sol;
  }
};

// Inertia-corrected factorization of [M + dw*I, Jg^T; Jg, -dc*I].
// Requires n positive and m negative pivots.
inline void factor_kkt(KktFactorization& fac, const SparseMatrix& M,
                       const SparseMatrix& Jg, double delta_hint) {
  const int n = static_cast<int>(M.rows());
  const int m = static_cast<int>(Jg.rows());
  auto assemble = [&](double dw, double dc) {
    std::vector<Triplet> trips;
    trips.reserve(M.nonZeros() + 2 * Jg.nonZeros() + n + m);
    for (int c = 0; c < M.outerSize(); ++c)
      for (SparseMatrix::InnerIterator it(M, c); it; ++it)
        trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                           it.value());
    for (int j = 0; j < n; ++j) trips.emplace_back(j, j, dw);
    for (int c = 0; c < Jg.outerSize(); ++c)
      for (SparseMatrix::InnerIterator it(Jg, c); it; ++it) {
        trips.emplace_back(n + static_cast<int>(it.row()),
                           static_cast<int>(it.col()), it.value());
        trips.emplace_back(static_cast<int>(it.col()),
                           n + static_cast<int>(it.row()), it.value());
      }
    for (int j = 0; j < m; ++j) trips.emplace_back(n + j, n + j, -std::max(dc, 0.0));
    SparseMatrix K(n + m, n + m);
    K.setFromTriplets(trips.begin(), trips.end());
    return K;
  };
  auto inertia_ok = [&]() {
    if (fac.ldlt.info() != Eigen::Success) return false;
    Vector d = fac.ldlt.vectorD();
    if (!d.allFinite()) return false;
    int pos = 0, neg = 0;
    for (int j = 0; j < d.size(); ++j) {
      if (d[j] > 0) ++pos;
      else if (d[j] < 0) ++neg;
    }
    return pos == n && neg == m;
  };
  double dw = 0.0, dc = 0.0;
  for (int attempt = 0; attempt < 80; ++attempt) {
    fac.K = assemble(dw, dc);
    fac.ldlt.compute(fac.K);
    if (inertia_ok()) {
      fac.delta_w = dw;
      fac.delta_c = dc;
      fac.ok = true;
      return;
    }
    if (dw == 0.0)
      dw = delta_hint > 0.0 ? std::max(1e-20, delta_hint / 3.0) : 1e-8;
    else
      dw *= 10.0;
    if (dw > 1e30) {
      if (dc == 0.0 && m > 0) {
        dc = 1e-8;
        dw = delta_hint > 0.0 ? delta_hint : 1e-8;
      } else {
        fac.ok = false;
        return;
      }
    }
  }
  fac.ok = false;
}

}  // namespace detail

/// Primal-dual interior-point solver. Inequalities (user rows plus finite
/// bounds) carry slacks z > 0 with multipliers gamma > 0; the barrier weight
/// follows a monotone Fiacco-McCormick schedule (divide by 10 once the
/// barrier subproblem is solved to within 10x the current weight).
inline IpResult solve_nlp(const NlpProblem& p, const Vector& x0,
                          const IpOptions& opt = {}) {
  if (x0.size() != p.n) throw InputError("solve_nlp: start point has wrong length");
  const detail::IneqLayout lay = detail::make_ineq_layout(p);
  const int n = p.n;
  const int mg = p.eq.dim_out;
  const int mh = lay.total();

  // Push the start strictly inside the bounds.
  Vector x = x0;
  for (int j = 0; j < n; ++j) {
    double lo = p.lower[j], hi = p.upper[j];
    if (std::isfinite(lo) && std::isfinite(hi)) {
      double margin = 1e-2 * std::min(1.0, hi - lo);
      x[j] = std::clamp(x[j], lo + margin, hi - margin);
    } else if (std::isfinite(lo)) {
      x[j] = std::max(x[j], lo + 1e-2 * std::max(1.0, std::abs(lo)));
    } else if (std::isfinite(hi)) {
      x[j] = std::min(x[j], hi - 1e-2 * std::max(1.0, std::abs(hi)));
    }
  }

  // Objective scaling a la Ipopt: normalize so the objective gradient at the
  // start point has infinity norm <= 100. Keeps the KKT system balanced when
  // the objective carries a huge proximal weight; duals are rescaled on exit.
  double obj_scale = 1.0;
  {
    Vector g0 = Vector(p.objective.jacobian(x).transpose()).col(0);
    if (g0.allFinite())
      obj_scale = std::max(1.0, g0.lpNorm<Eigen::Infinity>() / 100.0);
    SparseMatrix H0 = p.objective.hessian_vlp(x, Vector::Ones(1));
    double hmax = 0.0;
    for (int c = 0; c < H0.outerSize(); ++c)
      for (SparseMatrix::InnerIterator it(H0, c); it; ++it)
        hmax = std::max(hmax, std::abs(it.value()));
    if (std::isfinite(hmax)) obj_scale = std::max(obj_scale, hmax / 1e8);
  }
  const double inv_scale = 1.0 / obj_scale;

  Vector h = detail::eval_ineq(p, lay, x);
  require_finite(h, "inequality constraints");
  Vector z(mh), gam(mh);
  double barrier = mh > 0 ? opt.barrier_init : 0.0;
  for (int j = 0; j < mh; ++j) {
    z[j] = std::max(1e-4, -h[j]);
    gam[j] = barrier / z[j];
  }
  Vector lam = Vector::Zero(mg);

  IpResult res;
  res.x = x;
  double delta_hint = 0.0;
  int tiny_steps = 0;
  // Per-column Lagrangian-Hessian scale seen in the previous iteration.
  // The gradient component of a term with curvature c is representable only
  // on a grid of spacing ~ c * eps * |x|, so stationarity below that is pure
  // rounding noise (relevant for proximal weights ~1e12). The floor must be
  // column-wise: a huge proximal block on a few coordinates says nothing
  // about the achievable resolution elsewhere.
  Vector curv_col = Vector::Zero(n);
  int floor_steps = 0;

  for (int iter = 0; iter <= opt.max_iter; ++iter) {
    Vector fval = p.objective.eval(x);
    require_finite(fval, "objective");
    Vector grad = inv_scale * Vector(p.objective.jacobian(x).transpose()).col(0);
    require_finite(grad, "objective gradient");
    Vector g(mg);
    SparseMatrix Jg(mg, n);
    if (mg > 0) {
      g = p.eq.eval(x);
      require_finite(g, "equality constraints");
      Jg = p.eq.jacobian(x);
    }
    h = detail::eval_ineq(p, lay, x);
    require_finite(h, "inequality constraints");
    SparseMatrix Jh = detail::ineq_jacobian(p, lay, x);

    Vector Lx = grad;
    if (mg > 0) Lx += Jg.transpose() * lam;
    if (mh > 0) Lx += Jh.transpose() * gam;

    double feas = mg > 0 ? g.lpNorm<Eigen::Infinity>() : 0.0;
    for (int j = 0; j < mh; ++j) feas = std::max(feas, std::abs(h[j] + z[j]));
    double comp0 = 0.0, compb = 0.0;
    for (int j = 0; j < mh; ++j) {
      comp0 = std::max(comp0, std::abs(z[j] * gam[j]));
      compb = std::max(compb, std::abs(z[j] * gam[j] - barrier));
    }
    double dual_scale =
        std::max(1.0, (lam.lpNorm<1>() + gam.lpNorm<1>()) /
                          (100.0 * std::max(1, mg + mh)));
    double stat = Lx.lpNorm<Eigen::Infinity>();

    res.x = x;
    res.eq_duals = obj_scale * lam;
    res.ineq_duals = obj_scale * gam.head(lay.nh);
    res.lower_duals = Vector::Zero(n);
    res.upper_duals = Vector::Zero(n);
    {
      int k = lay.nh;
      for (int j : lay.upper_ix) res.upper_duals[j] = obj_scale * gam[k++];
      for (int j : lay.lower_ix) res.lower_duals[j] = obj_scale * gam[k++];
    }
    res.iterations = iter;
    res.objective = fval[0];
    res.stationarity = obj_scale * stat;
    res.feasibility = feas;
    res.complementarity = obj_scale * comp0;

    if (opt.log)
      *opt.log << "ip iter " << iter << " f=" << fval[0] << " stat=" << stat
               << " feas=" << feas << " comp=" << comp0 << " mu=" << barrier
               << '\n';

    const double eps_grid = 10.0 * std::numeric_limits<double>::epsilon() *
                            (1.0 + x.lpNorm<Eigen::Infinity>());
    double stat_eff = 0.0;
    for (int j = 0; j < n; ++j)
      if (std::abs(Lx[j]) > eps_grid * (1.0 + curv_col[j]))
        stat_eff = std::max(stat_eff, std::abs(Lx[j]));
    floor_steps = stat_eff == 0.0 ? floor_steps + 1 : 0;

    if (std::max({stat_eff / dual_scale, feas, comp0 / dual_scale}) <= opt.tol) {
      res.status = SolveStatus::optimal;
      return res;
    }
    if (floor_steps >= 3 && feas <= std::max(opt.tol, 1e-6) &&
        comp0 / dual_scale <= 1e2 * opt.tol) {
      // Stationarity is pinned at the floating-point grid of the gradient.
      res.status = SolveStatus::optimal;
      return res;
    }
    if (tiny_steps >= 3) {
      // Step length at the floating-point grid; accept if feasible.
      res.status = feas <= std::max(opt.tol, 1e-7)
                       ? SolveStatus::optimal
                       : SolveStatus::infeasible_detected;
      return res;
    }
    if (iter == opt.max_iter) {
      res.status = SolveStatus::max_iter;
      return res;
    }

    while (mh > 0 && barrier > opt.tol * opt.barrier_min_factor &&
           std::max({stat_eff / dual_scale, feas, compb / dual_scale}) <=
               10.0 * barrier) {
      barrier /= 10.0;
      compb = 0.0;
      for (int j = 0; j < mh; ++j)
        compb = std::max(compb, std::abs(z[j] * gam[j] - barrier));
    }

    // Condensed Newton system in (dx, dlam).
    SparseMatrix H = p.objective.hessian_vlp(x, Vector::Constant(1, inv_scale));
    if (mg > 0) H = H + p.eq.hessian_vlp(x, lam);
    if (lay.nh > 0)
      H = H + p.ineq.hessian_vlp(x, Vector(gam.head(lay.nh)));
    curv_col.setZero();
    for (int c = 0; c < H.outerSize(); ++c)
      for (SparseMatrix::InnerIterator it(H, c); it; ++it) {
        double a = std::abs(it.value());
        curv_col[it.col()] = std::max(curv_col[it.col()], a);
        curv_col[it.row()] = std::max(curv_col[it.row()], a);
      }
    SparseMatrix M = H;
    Vector rhs_x = -Lx;
    if (mh > 0) {
      Vector w(mh);  // gam / z
      for (int j = 0; j < mh; ++j) w[j] = gam[j] / z[j];
      SparseMatrix JhT = Jh.transpose();
      M = H + SparseMatrix(JhT * w.asDiagonal() * Jh);
      Vector corr(mh);
      for (int j = 0; j < mh; ++j) corr[j] = (barrier + gam[j] * h[j]) / z[j];
      rhs_x = -(Lx + JhT * corr);
    }
    M.makeCompressed();

    detail::KktFactorization fac;
    detail::factor_kkt(fac, M, Jg, delta_hint);
    if (!fac.ok) {
      res.status = SolveStatus::numerical_failure;
      return res;
    }
    if (fac.delta_w > 0.0) delta_hint = fac.delta_w;

    Vector rhs(n + mg);
    rhs.head(n) = rhs_x;
    if (mg > 0) rhs.tail(mg) = -g;
    Vector sol = fac.solve(rhs);
    Vector dx = sol.head(n);
    Vector dlam = mg > 0 ? Vector(sol.tail(mg)) : Vector(0);

    Vector dz(mh), dgam(mh);
    if (mh > 0) {
      Vector Jhdx = Jh * dx;
      for (int j = 0; j < mh; ++j) {
        dz[j] = -(h[j] + z[j]) - Jhdx[j];
        dgam[j] = (barrier - gam[j] * z[j] - gam[j] * dz[j]) / z[j];
      }
    }

    double alpha_p = 1.0, alpha_d = 1.0;
    for (int j = 0; j < mh; ++j) {
      if (dz[j] < 0) alpha_p = std::min(alpha_p, -z[j] / dz[j]);
      if (dgam[j] < 0) alpha_d = std::min(alpha_d, -gam[j] / dgam[j]);
    }
    alpha_p = std::min(1.0, opt.bound_frac * alpha_p);
    alpha_d = std::min(1.0, opt.bound_frac * alpha_d);

    double step_size = alpha_p * dx.lpNorm<Eigen::Infinity>();
    if (step_size <= 1e2 * std::numeric_limits<double>::epsilon() *
                         (1.0 + x.lpNorm<Eigen::Infinity>()))
      ++tiny_steps;
    else
      tiny_steps = 0;

    x += alpha_p * dx;
    if (mh > 0) {
      z += alpha_p * dz;
      gam += alpha_d * dgam;
    }
    if (mg > 0) lam += alpha_d * dlam;
  }
  return res;  // unreachable
}

}  // namespace dopf

#endif  // DOPF_INTERIOR_POINT_HPP
