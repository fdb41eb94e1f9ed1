#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

namespace bimanip {

/// Convex QP in conic box form:
///   minimize   0.5 x'Px + q'x
///   subject to l <= Ax <= u
/// Equality rows use l == u; one-sided rows use +-infinity.
struct QpProblem {
  Eigen::SparseMatrix<double> P;
  Eigen::VectorXd q;
  Eigen::SparseMatrix<double> A;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  int num_vars() const { return static_cast<int>(P.rows()); }
  int num_constraints() const { return static_cast<int>(A.rows()); }
};

struct QpSettings {
  double eps_abs = 1e-6;
  double eps_rel = 0.0;
  int max_iters = 20000;
  int check_interval = 25;
  double sigma = 1e-6;  // x regularization inside the splitting
  double alpha = 1.6;   // relaxation
  double rho0 = 0.1;
  bool adaptive_rho = true;
  bool scaling = true;
  bool polish = true;
  double eps_infeasible = 1e-8;
  /// Dual residual accepted per component as eps_abs * (1 + |q_i|); keeps
  /// rows with huge linear coefficients (exact-penalty slacks) from forcing
  /// needless iterations on the well-scaled part.
  bool per_component_dual_tol = false;
  /// Starting step size; pass a previous solve's final_rho to warm the scale.
  double rho_init = 0.0;  // 0 -> use rho0
};

enum class QpStatus { Solved, MaxIterations, PrimalInfeasible, DualInfeasible };

struct QpSolution {
  QpStatus status = QpStatus::MaxIterations;
  Eigen::VectorXd x;
  Eigen::VectorXd y;  // multipliers for l <= Ax <= u (negative on lower-active rows)
  double objective = 0.0;
  int iterations = 0;
  double primal_residual = 0.0;
  double dual_residual = 0.0;
  bool polished = false;
  double final_rho = 0.0;

  bool solved() const { return status == QpStatus::Solved; }
};

/// Operator-splitting (ADMM) solver with Ruiz equilibration, adaptive step
/// size and an active-set polish pass. Deterministic.
QpSolution solve_qp(const QpProblem& problem, const QpSettings& settings = {},
                    const Eigen::VectorXd* warm_x = nullptr,
                    const Eigen::VectorXd* warm_y = nullptr);

/// Dense convenience form:
///   minimize 0.5 x'Hx + g'x  s.t.  A_ineq x <= b_ineq,  A_eq x = b_eq.
/// H is symmetrized and regularized by +1e-8 I. Pass empty matrices for absent
/// constraint blocks. Inequality duals are >= 0 in the returned multipliers.
QpSolution solve_qp_dense(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                          const Eigen::MatrixXd& A_ineq, const Eigen::VectorXd& b_ineq,
                          const Eigen::MatrixXd& A_eq, const Eigen::VectorXd& b_eq, double tol);

/// Max KKT residuals of a candidate solution: stationarity, primal
/// feasibility and complementarity (all absolute).
struct KktResiduals {
  double stationarity = 0.0;
  double primal = 0.0;
  double complementarity = 0.0;
  double max() const { return std::max({stationarity, primal, complementarity}); }
};

KktResiduals kkt_residuals(const QpProblem& problem, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& y);

}  // namespace bimanip
