#ifndef DOPF_TYPES_HPP
#define DOPF_TYPES_HPP

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace dopf {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using SparseMatrix = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

constexpr double kInf = std::numeric_limits<double>::infinity();

/// Fatal problem-construction or dimension error.
class InputError : public std::runtime_error {
 public:
  explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A callback produced NaN/Inf.
class EvaluationError : public std::runtime_error {
 public:
  explicit EvaluationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Value, Jacobian and weighted Hessian of a twice differentiable map.
///
/// hessian_vlp(x, w) returns sum_j w_j * Hess(f_j)(x).
struct SmoothFunction {
  int dim_in = 0;
  int dim_out = 0;
  std::function<Vector(const Vector&)> eval;
  std::function<SparseMatrix(const Vector&)> jacobian;
  std::function<SparseMatrix(const Vector&, const Vector&)> hessian_vlp;
};

/// Constant zero map with empty output, used for absent constraint blocks.
inline SmoothFunction empty_function(int dim_in) {
  SmoothFunction f;
  f.dim_in = dim_in;
  f.dim_out = 0;
  f.eval = [](const Vector&) { return Vector(0); };
  f.jacobian = [dim_in](const Vector&) { return SparseMatrix(0, dim_in); };
  f.hessian_vlp = [dim_in](const Vector&, const Vector&) {
    return SparseMatrix(dim_in, dim_in);
  };
  return f;
}

/// One region of an affinely coupled separable NLP:
///   min f_i(x_i)  s.t.  g_i(x_i) = 0,  h_i(x_i) <= 0,  lower <= x_i <= upper,
/// coupled through rows of A_i in the consensus constraint sum_i A_i x_i = 0.
struct Subproblem {
  int n_xi = 0;
  SmoothFunction objective;         // scalar output
  SmoothFunction eq_constraints;    // g_i
  SmoothFunction ineq_constraints;  // h_i
  Vector lower;
  Vector upper;
  SparseMatrix A;                   // n_c x n_xi
  Vector scaling_diag;              // Sigma_i > 0, length n_xi

  void validate() const {
    if (objective.dim_in != n_xi || objective.dim_out != 1)
      throw InputError("Subproblem: objective dimensions inconsistent");
    if (eq_constraints.dim_in != n_xi || ineq_constraints.dim_in != n_xi)
      throw InputError("Subproblem: constraint dim_in != n_xi");
    if (lower.size() != n_xi || upper.size() != n_xi)
      throw InputError("Subproblem: bound length != n_xi");
    if (A.cols() != n_xi) throw InputError("Subproblem: A has wrong column count");
    if (scaling_diag.size() != n_xi)
      throw InputError("Subproblem: scaling_diag length != n_xi");
    for (int j = 0; j < n_xi; ++j) {
      if (!(scaling_diag[j] > 0.0))
        throw InputError("Subproblem: scaling_diag must be strictly positive");
      if (lower[j] > upper[j])
        throw InputError("Subproblem: lower > upper at index " + std::to_string(j));
    }
  }
};

struct PartitionedProblem {
  std::vector<Subproblem> regions;
  int n_c = 0;  // consensus row count

  int num_regions() const { return static_cast<int>(regions.size()); }

  int total_dim() const {
    int n = 0;
    for (const auto& r : regions) n += r.n_xi;
    return n;
  }

  void validate() const {
    for (const auto& r : regions) {
      r.validate();
      if (r.A.rows() != n_c)
        throw InputError("PartitionedProblem: A_i row count != n_c");
    }
  }
};

/// Per-iteration algorithm state shared by both engines. ADMM keeps one
/// multiplier per region (lambda_local), ALADIN a single global one.
struct IterateState {
  std::vector<Vector> x;
  std::vector<Vector> z;
  std::vector<Vector> lambda_local;
  Vector lambda_global;
  int k = 0;
};

inline void check_region_dims(const PartitionedProblem& p,
                              const std::vector<Vector>& v,
                              const char* what) {
  if (static_cast<int>(v.size()) != p.num_regions())
    throw InputError(std::string(what) + ": region count mismatch");
  for (int i = 0; i < p.num_regions(); ++i)
    if (v[i].size() != p.regions[i].n_xi)
      throw InputError(std::string(what) + ": length mismatch in region " +
                       std::to_string(i));
}

inline void require_finite(const Vector& v, const std::string& context) {
  if (!v.allFinite()) throw EvaluationError("non-finite value from " + context);
}

}  // namespace dopf

#endif  // DOPF_TYPES_HPP
