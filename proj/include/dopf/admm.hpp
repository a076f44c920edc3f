#ifndef DOPF_ADMM_HPP
#define DOPF_ADMM_HPP

#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "dopf/local_solver.hpp"
#include "dopf/metrics.hpp"
#include "dopf/trace.hpp"
#include "dopf/types.hpp"

namespace dopf {

struct AdmmConfig {
  double rho = 1e4;
  int max_iter = 500;
  double termination_eps = 1e-6;  // on ||A(x^k - z^k)||_inf
  int stall_window = 10;
  double stall_tol = 1e-4;
  LocalSolverOptions local;
  bool record_stationarity = true;
};

struct StallReport {
  bool stalled = false;
  int since_iter = -1;
  double objective_drift = 0.0;
};

/// Coordination QP of Eq. (4). The linear term enters as -lambda_i^T A_i dx_i:
/// the consensus step minimizes the augmented Lagrangian over the copy
/// variables, and substituting A_i z_i = A_i x_i + A_i dx_i into
/// lambda_i^T (A_i x_i - A_i z_i) flips the sign. With the opposite sign the
/// recursion is expansive even on strictly convex problems.
/// Solved through the KKT conditions in the image variables y_i = A_i dx_i:
///   y_i = (1/rho) P_i (lambda_i - nu),   (sum_i P_i) nu = rho r + sum_i P_i lambda_i,
/// with P_i the orthogonal projector onto range(A_i) and r = sum_i A_i x_i.
/// dx_i = pinv(A_i) y_i is the minimum-norm tie-break; the parametrization
/// stays well-scaled for arbitrarily large rho.
class AdmmConsensusSolver {
 public:
  explicit AdmmConsensusSolver(const PartitionedProblem& p) {
    const int R = p.num_regions();
    pinv_.resize(R);
    proj_.resize(R);
    Matrix sum_proj = Matrix::Zero(p.n_c, p.n_c);
    for (int i = 0; i < R; ++i) {
      Matrix Ai = Matrix(p.regions[i].A);
      Eigen::CompleteOrthogonalDecomposition<Matrix> cod(Ai);
      pinv_[i] = cod.pseudoInverse();
      proj_[i] = Ai * pinv_[i];
      proj_[i] = 0.5 * (proj_[i] + proj_[i].transpose());
      sum_proj += proj_[i];
    }
    if (p.n_c > 0) {
      ldlt_.compute(sum_proj);
      if (ldlt_.info() != Eigen::Success)
        throw InputError(
            "admm consensus: sum of range projectors is singular; the stacked "
            "coupling matrix A must have full row rank");
    }
  }

  struct Result {
    std::vector<Vector> delta;
    Vector nu;  // multiplier of the consensus constraint
  };

  Result solve(const PartitionedProblem& p, const std::vector<Vector>& x,
               const std::vector<Vector>& lambda, double rho) const {
    check_region_dims(p, x, "admm consensus");
    const int R = p.num_regions();
    Result res;
    res.delta.resize(R);
    if (p.n_c == 0) {
      for (int i = 0; i < R; ++i) res.delta[i] = Vector::Zero(p.regions[i].n_xi);
      res.nu = Vector(0);
      return res;
    }
    Vector r = Vector::Zero(p.n_c);
    Vector rhs = Vector::Zero(p.n_c);
    for (int i = 0; i < R; ++i) {
      r += p.regions[i].A * x[i];
      rhs += proj_[i] * lambda[i];
    }
    rhs += rho * r;
    res.nu = ldlt_.solve(rhs);
    for (int i = 0; i < R; ++i) {
      Vector yi = (proj_[i] * (lambda[i] - res.nu)) / rho;
      res.delta[i] = pinv_[i] * yi;
    }
    return res;
  }

 private:
  std::vector<Matrix> pinv_;
  std::vector<Matrix> proj_;
  Eigen::LDLT<Matrix> ldlt_;
};

/// Step 1 of Algorithm 1: coupled-metric proximal solves, one per region.
inline std::vector<LocalSolveResult> admm_local_step(
    const PartitionedProblem& p, const IterateState& state,
    const AdmmConfig& cfg) {
  check_region_dims(p, state.z, "admm_local_step z");
  std::vector<LocalSolveResult> results(p.num_regions());
  for (int i = 0; i < p.num_regions(); ++i) {
    const Subproblem& s = p.regions[i];
    AugmentedLocalProblem loc;
    loc.base = &s;
    loc.linear_term = s.A.transpose() * state.lambda_local[i];
    loc.prox_center = state.z[i];
    loc.prox_weight = cfg.rho;
    loc.prox_metric = ProxMetric::coupling;
    results[i] = solve_local(loc, state.z[i], cfg.local);
    if (results[i].status != SolveStatus::optimal)
      throw EvaluationError("admm local step failed in region " +
                            std::to_string(i) + " (" +
                            to_string(results[i].status) + ")");
  }
  return results;
}

/// Eq. (3): lambda_i <- lambda_i + rho A_i (x_i - z_i), exactly.
inline void dual_update(const PartitionedProblem& p, IterateState& state,
                        const std::vector<LocalSolveResult>& locals,
                        const AdmmConfig& cfg) {
  for (int i = 0; i < p.num_regions(); ++i)
    state.lambda_local[i] +=
        cfg.rho * (p.regions[i].A * (locals[i].x_opt - state.z[i]));
}

struct AdmmRunResult {
  ConvergenceTrace trace;
  IterateState state;
  StallReport stall;
  bool failed = false;
  std::string error;
  bool converged = false;
};

/// Frozen-but-not-optimal detector: over the last stall_window iterations the
/// iterates moved by at most stall_tol while the full-problem stationarity
/// gap stayed above 100x stall_tol.
inline StallReport detect_stall(const ConvergenceTrace& trace,
                                const AdmmConfig& cfg) {
  StallReport rep;
  const auto& rows = trace.rows;
  if (static_cast<int>(rows.size()) < cfg.stall_window + 1) return rep;
  double max_step = 0.0;
  for (size_t j = rows.size() - cfg.stall_window; j < rows.size(); ++j)
    max_step = std::max(max_step, rows[j].step_norm);
  bool frozen = max_step <= cfg.stall_tol;
  bool optimal = rows.back().stationarity <= 100.0 * cfg.stall_tol;
  rep.stalled = frozen && !optimal;
  if (rep.stalled) {
    size_t j = rows.size();
    while (j > 1 && rows[j - 1].step_norm <= cfg.stall_tol) --j;
    rep.since_iter = rows[j].k;
    double lo = rows[j].objective, hi = rows[j].objective;
    for (size_t t = j; t < rows.size(); ++t) {
      lo = std::min(lo, rows[t].objective);
      hi = std::max(hi, rows[t].objective);
    }
    rep.objective_drift = hi - lo;
  }
  return rep;
}

namespace detail {

inline double sum_objective(const PartitionedProblem& p,
                            const std::vector<Vector>& x) {
  double f = 0.0;
  for (int i = 0; i < p.num_regions(); ++i)
    f += p.regions[i].objective.eval(x[i])[0];
  return f;
}

inline double primal_gap(const PartitionedProblem& p,
                         const std::vector<Vector>& x,
                         const std::vector<Vector>& z) {
  if (p.n_c == 0) return 0.0;
  Vector r = Vector::Zero(p.n_c);
  for (int i = 0; i < p.num_regions(); ++i)
    r += p.regions[i].A * (x[i] - z[i]);
  return r.lpNorm<Eigen::Infinity>();
}

inline double dist_inf(const std::vector<Vector>& a,
                       const std::vector<Vector>& b) {
  double d = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    d = std::max(d, (a[i] - b[i]).lpNorm<Eigen::Infinity>());
  return d;
}

inline double elapsed_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

}  // namespace detail

/// Algorithm 1 driver. Iterates local step, dual update, consensus step and
/// z-update until ||A(x^k - z^k)||_inf < eps or max_iter.
inline AdmmRunResult admm_run(
    const PartitionedProblem& p, const IterateState& initial,
    const AdmmConfig& cfg,
    const std::optional<std::vector<Vector>>& reference = std::nullopt) {
  p.validate();
  AdmmRunResult out;
  out.state = initial;
  IterateState& st = out.state;
  if (st.lambda_local.empty()) {
    st.lambda_local.assign(p.num_regions(), Vector::Zero(p.n_c));
  }
  AdmmConsensusSolver consensus(p);
  std::vector<Vector> prev_x;
  try {
    for (int k = 0; k < cfg.max_iter; ++k) {
      TraceRow row;
      row.k = k;
      auto t0 = std::chrono::steady_clock::now();
      std::vector<LocalSolveResult> locals = admm_local_step(p, st, cfg);
      row.local_ms = detail::elapsed_ms(t0);

      st.x.resize(p.num_regions());
      for (int i = 0; i < p.num_regions(); ++i) st.x[i] = locals[i].x_opt;

      row.consensus_gap = consensus_gap(p, st.x);
      row.objective = detail::sum_objective(p, st.x);
      row.primal_gap = detail::primal_gap(p, st.x, st.z);
      if (reference) row.dist_to_ref = detail::dist_inf(st.x, *reference);
      row.step_norm = prev_x.empty() ? 0.0 : detail::dist_inf(st.x, prev_x);
      if (cfg.record_stationarity) row.stationarity = stationarity_gap(p, st.x);
      prev_x = st.x;

      dual_update(p, st, locals, cfg);

      auto t1 = std::chrono::steady_clock::now();
      auto cons = consensus.solve(p, st.x, st.lambda_local, cfg.rho);
      row.coord_ms = detail::elapsed_ms(t1);
      for (int i = 0; i < p.num_regions(); ++i)
        st.z[i] = st.x[i] + cons.delta[i];

      row.violation = constraint_violation(p, st.z);
      row.objective_at_z = detail::sum_objective(p, st.z);
      out.trace.rows.push_back(row);
      st.k = k + 1;

      if (row.primal_gap < cfg.termination_eps) {
        out.converged = true;
        break;
      }
    }
  } catch (const std::exception& e) {
    out.failed = true;
    out.error = e.what();
  }
  out.stall = detect_stall(out.trace, cfg);
  return out;
}

}  // namespace dopf

#endif  // DOPF_ADMM_HPP
