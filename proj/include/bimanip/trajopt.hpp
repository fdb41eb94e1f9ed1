#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bimanip/arm.hpp"
#include "bimanip/qp.hpp"

namespace bimanip {

struct GoalWeights {
  double goal_p = 100.0;
  double goal_r = 10.0;
  double effort = 0.1;
};

struct TrajOptConfig {
  int horizon = 10;          // T timesteps per meta-step
  double dt = 0.1;           // seconds per timestep
  int max_meta_steps = 10;
  double eps_p = 0.005;      // terminal position tolerance [m]
  double eps_r = 0.05;       // terminal rotation tolerance [rad]
  int sqp_max_iters = 10;
  double qp_tolerance = 1e-4;
  double trust_region = 0.8;       // |dqdot| box per SQP iteration [rad/s]
  double collision_margin = 0.005; // required clearance [m]
  GoalWeights weights;

  // knot-level extras
  double knot_margin_buffer = 0.003;  // added clearance at knots to cover
                                      // inter-knot interpolation error [m]
  double cull_distance = 0.30;        // constraints farther than this at the
                                      // linearization point are dropped;
                                      // infinity disables culling [m]
  int qp_max_iters = 20000;
  double slack_penalty = 1e4;         // exact-penalty weight on soft rows

  void validate() const;
};

/// Per-arm goal: SE(3) pose target, joint-space hold, or none.
struct ArmGoal {
  enum class Kind { None, Se3, JointHold };
  Kind kind = Kind::None;
  Pose target;             // Se3
  Eigen::VectorXd q_hold;  // JointHold

  static ArmGoal none() { return {}; }
  static ArmGoal se3(const Pose& pose) {
    ArmGoal g;
    g.kind = Kind::Se3;
    g.target = pose;
    return g;
  }
  static ArmGoal joint_hold(const Eigen::VectorXd& q) {
    ArmGoal g;
    g.kind = Kind::JointHold;
    g.q_hold = q;
    return g;
  }
};

struct TrajOptProblem {
  const BiArmModel* model = nullptr;
  Eigen::VectorXd q0;     // combined joint vector
  Eigen::VectorXd qdot0;  // informational under single-integrator kinematics
  ArmGoal goal_left;
  ArmGoal goal_right;
  std::vector<Aabb> obstacles;
  std::optional<std::string> excluded_object;  // bookkeeping for the trace

  const ArmGoal& goal(ArmSide side) const {
    return side == ArmSide::Left ? goal_left : goal_right;
  }

  /// Validates and projects q0 onto the joint limits (tolerance 1e-6), throws
  /// std::invalid_argument beyond that.
  void normalize();
};

struct ConstraintCounts {
  int velocity_rows = 0;
  int trust_rows = 0;
  int position_rows = 0;
  int workspace_rows = 0;
  int arm_arm_rows = 0;
  int obstacle_rows = 0;
  int slack_bound_rows = 0;

  int total_rows() const {
    return velocity_rows + trust_rows + position_rows + workspace_rows + arm_arm_rows +
           obstacle_rows + slack_bound_rows;
  }
  /// One-sided inequality count: two-sided rows count twice.
  int inequality_count() const {
    return 2 * (velocity_rows + trust_rows + position_rows) + workspace_rows + arm_arm_rows +
           obstacle_rows + slack_bound_rows;
  }
};

struct Subproblem {
  QpProblem qp;
  int num_velocity_vars = 0;  // T * n, leading block of the decision vector
  int num_slacks = 0;
  ConstraintCounts counts;
};

/// Linearizes costs and constraints around (q_traj_lin, qdot_traj_lin).
/// Decision variables are stacked joint velocities (positions eliminated via
/// single-integrator dynamics) followed by non-negative collision slacks, so
/// the subproblem is always feasible.
Subproblem build_subproblem(const TrajOptProblem& prob, const Eigen::MatrixXd& q_traj_lin,
                            const Eigen::MatrixXd& qdot_traj_lin, const TrajOptConfig& cfg,
                            const GoalWeights* weights_override = nullptr);

struct MetaStepResult {
  Eigen::MatrixXd q_traj;     // (T+1) x n
  Eigen::MatrixXd qdot_traj;  // T x n
  double e_p_T = 0.0;         // terminal position error [m]
  double e_r_T = 0.0;         // terminal rotation error [rad]
  bool converged = false;
  int sqp_iters = 0;
  double constraint_violation_max = 0.0;
  // bench bookkeeping
  int qp_iters = 0;
  int inequality_count = 0;
  double wall_ms = 0.0;
};

/// One short-horizon SQP solve. prev_errors feed the telescoping terminal
/// check; pass +infinity for the first meta-step.
MetaStepResult solve_meta_step(const TrajOptProblem& prob, const TrajOptConfig& cfg,
                               std::pair<double, double> prev_errors = {
                                   std::numeric_limits<double>::infinity(),
                                   std::numeric_limits<double>::infinity()});

enum class PlanStatus { Reached, InfeasibleGoal, Timeout };

struct PlanResult {
  std::vector<MetaStepResult> meta_steps;
  PlanStatus status = PlanStatus::Timeout;
  std::string feedback;

  const Eigen::VectorXd terminal_q() const {
    return meta_steps.back().q_traj.row(meta_steps.back().q_traj.rows() - 1);
  }
  int total_knots() const {
    int k = 0;
    for (const auto& m : meta_steps) k += static_cast<int>(m.qdot_traj.rows());
    return k;
  }
};

/// Quasi-MPC loop: concatenates meta-steps, each initialized at the previous
/// terminal state, until both tolerances are met, the meta-step cap is hit, or
/// progress stalls (InfeasibleGoal with a "cannot reach" feedback string).
PlanResult plan(const TrajOptProblem& prob, const TrajOptConfig& cfg);

struct CheckReport {
  double max_violation = 0.0;  // worst constraint violation, knots + interpolation
  double max_violation_knots = 0.0;
  std::string worst_constraint;
};

/// Independent verifier: re-evaluates the nonlinear constraints on every knot
/// and at 10x linear interpolation between knots.
CheckReport check_solution(const PlanResult& result, const TrajOptProblem& prob,
                           const TrajOptConfig& cfg);

/// Max violation of problem constraints for a single static configuration
/// (used for the recursive-feasibility property: the zero-velocity
/// continuation of a terminal state must satisfy the next subproblem).
double static_constraint_violation(const TrajOptProblem& prob, const TrajOptConfig& cfg,
                                   const Eigen::VectorXd& q);

}  // namespace bimanip
