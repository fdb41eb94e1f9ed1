#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bimanip/random.hpp"
#include "bimanip/trajopt.hpp"

using namespace bimanip;

namespace {

BiArmModel desk_model() { return make_desk_biarm(); }

TrajOptProblem hold_problem(const BiArmModel& model, const Eigen::VectorXd& q0) {
  TrajOptProblem prob;
  prob.model = &model;
  prob.q0 = q0;
  prob.qdot0 = Eigen::VectorXd::Zero(model.dof());
  prob.goal_left = ArmGoal::joint_hold(q0.head(model.left.dof()));
  prob.goal_right = ArmGoal::joint_hold(q0.tail(model.right.dof()));
  return prob;
}

Pose left_ee(const BiArmModel& model, const Eigen::VectorXd& q) {
  return forward_kinematics(model.left, q.head(model.left.dof()));
}

}  // namespace

TEST_CASE("build_subproblem: zero obstacles, goal at current pose -> qdot stays 0") {
  const BiArmModel model = desk_model();
  const Eigen::VectorXd q0 = desk_home_configuration(model);
  TrajOptProblem prob = hold_problem(model, q0);
  prob.goal_left = ArmGoal::se3(left_ee(model, q0));
  prob.normalize();

  TrajOptConfig cfg;
  const Eigen::MatrixXd v0 = Eigen::MatrixXd::Zero(cfg.horizon, model.dof());
  Eigen::MatrixXd q_lin(cfg.horizon + 1, model.dof());
  for (int t = 0; t <= cfg.horizon; ++t) q_lin.row(t) = q0.transpose();

  const Subproblem sub = build_subproblem(prob, q_lin, v0, cfg);
  QpSettings settings;
  settings.eps_abs = 1e-6;
  settings.per_component_dual_tol = true;  // exact-penalty slack scale
  const QpSolution sol = solve_qp(sub.qp, settings);
  REQUIRE(sol.solved());
  CHECK(sol.x.head(sub.num_velocity_vars).cwiseAbs().maxCoeff() < 1e-6);
}

TEST_CASE("build_subproblem: sphere violating an obstacle -> slack active") {
  const BiArmModel model = desk_model();
  const Eigen::VectorXd q0 = desk_home_configuration(model);
  TrajOptProblem prob = hold_problem(model, q0);
  // a box swallowing the left tool sphere entirely
  const Pose ee = left_ee(model, q0);
  prob.obstacles.push_back(
      Aabb(ee.position - Eigen::Vector3d::Constant(0.3), ee.position + Eigen::Vector3d::Constant(0.3)));
  prob.normalize();

  TrajOptConfig cfg;
  const Eigen::MatrixXd v0 = Eigen::MatrixXd::Zero(cfg.horizon, model.dof());
  Eigen::MatrixXd q_lin(cfg.horizon + 1, model.dof());
  for (int t = 0; t <= cfg.horizon; ++t) q_lin.row(t) = q0.transpose();

  const Subproblem sub = build_subproblem(prob, q_lin, v0, cfg);
  REQUIRE(sub.num_slacks > 0);
  QpSettings settings;
  settings.eps_abs = 1e-5;
  settings.per_component_dual_tol = true;
  const QpSolution sol = solve_qp(sub.qp, settings);
  REQUIRE(sol.solved());  // soft constraints keep the QP feasible
  CHECK(sol.x.tail(sub.num_slacks).maxCoeff() > 0.01);

  // and the violation is reported honestly by the meta-step
  const MetaStepResult meta = solve_meta_step(prob, cfg);
  CHECK(meta.constraint_violation_max > 0.0);
}

TEST_CASE("build_subproblem: constraint count matches the hand formula") {
  const BiArmModel model = desk_model();
  const Eigen::VectorXd q0 = desk_home_configuration(model);
  TrajOptProblem prob = hold_problem(model, q0);
  prob.obstacles.push_back(Aabb({-0.2, 0.1, 0.0}, {-0.1, 0.2, 0.1}));
  prob.obstacles.push_back(Aabb({0.1, 0.1, 0.0}, {0.2, 0.2, 0.1}));
  prob.obstacles.push_back(Aabb({0.3, 0.3, 0.0}, {0.4, 0.4, 0.2}));
  prob.normalize();

  TrajOptConfig cfg;
  cfg.cull_distance = std::numeric_limits<double>::infinity();  // count every pair
  const int T = cfg.horizon;
  const int n = model.dof();
  const int spheres = static_cast<int>(model.left.collision_spheres.size() +
                                       model.right.collision_spheres.size());
  const int pairs = static_cast<int>(model.left.collision_spheres.size() *
                                     model.right.collision_spheres.size());
  const int n_obs = static_cast<int>(prob.obstacles.size());

  const Eigen::MatrixXd v0 = Eigen::MatrixXd::Zero(T, n);
  Eigen::MatrixXd q_lin(T + 1, n);
  for (int t = 0; t <= T; ++t) q_lin.row(t) = q0.transpose();
  const Subproblem sub = build_subproblem(prob, q_lin, v0, cfg);

  CHECK(sub.counts.velocity_rows == T * n);
  CHECK(sub.counts.trust_rows == T * n);
  CHECK(sub.counts.position_rows == T * n);
  CHECK(sub.counts.workspace_rows == 6 * spheres * T);
  CHECK(sub.counts.arm_arm_rows == pairs * T);
  CHECK(sub.counts.obstacle_rows == spheres * n_obs * T);
  CHECK(sub.counts.slack_bound_rows == spheres * T + pairs * T + spheres * n_obs * T);
  CHECK(sub.qp.num_constraints() == sub.counts.total_rows());
  CHECK(sub.qp.num_vars() == T * n + sub.num_slacks);
  // one-sided inequality count: the paper-scale metric
  CHECK(sub.counts.inequality_count() ==
        2 * 3 * T * n + 6 * spheres * T + pairs * T + spheres * n_obs * T +
            sub.num_slacks);
}

TEST_CASE("solve_meta_step: goal at current pose converges immediately") {
  const BiArmModel model = desk_model();
  const Eigen::VectorXd q0 = desk_home_configuration(model);
  TrajOptProblem prob = hold_problem(model, q0);
  prob.goal_left = ArmGoal::se3(left_ee(model, q0));

  const MetaStepResult meta = solve_meta_step(prob, TrajOptConfig{});
  CHECK(meta.converged);
  CHECK(meta.sqp_iters == 1);
  CHECK(meta.e_p_T < 1e-6);
}

TEST_CASE("solve_meta_step: reachable goal 10 cm away in free space") {
  const BiArmModel model = desk_model();
  const Eigen::VectorXd q0 = desk_home_configuration(model);
  TrajOptProblem prob = hold_problem(model, q0);
  Pose goal = left_ee(model, q0);
  goal.position += Eigen::Vector3d(0.05, 0.08, -0.03);
  prob.goal_left = ArmGoal::se3(goal);

  // independent straight-line-in-joint-space feasibility oracle
  Eigen::VectorXd q_ik = q0.head(model.left.dof());
  REQUIRE(damped_ik(model.left, goal, q_ik));

  TrajOptConfig cfg;
  const MetaStepResult meta = solve_meta_step(prob, cfg);
  CHECK(meta.sqp_iters <= cfg.sqp_max_iters);
  CHECK(meta.converged);
  CHECK(meta.e_p_T <= cfg.eps_p);
  CHECK(meta.e_r_T <= cfg.eps_r);
}

TEST_CASE("solve_meta_step: unreachable goal behind a full wall fails the check") {
  const BiArmModel model = desk_model();
  const Eigen::VectorXd q0 = desk_home_configuration(model);
  TrajOptProblem prob = hold_problem(model, q0);
  Pose goal = left_ee(model, q0);
  goal.position = Eigen::Vector3d(0.55, 0.25, 0.15);  // far side
  prob.goal_left = ArmGoal::se3(goal);
  // wall spanning the entire workspace cross-section between start and goal
  prob.obstacles.push_back(Aabb({0.18, -0.45, -0.05}, {0.28, 0.60, 0.95}));

  TrajOptConfig cfg;
  const MetaStepResult meta = solve_meta_step(prob, cfg);
  CHECK_FALSE(meta.converged);
}

TEST_CASE("single-integrator consistency is exact") {
  const BiArmModel model = desk_model();
  const Eigen::VectorXd q0 = desk_home_configuration(model);
  TrajOptProblem prob = hold_problem(model, q0);
  Pose goal = left_ee(model, q0);
  goal.position += Eigen::Vector3d(0.06, 0.0, 0.02);
  prob.goal_left = ArmGoal::se3(goal);

  TrajOptConfig cfg;
  const MetaStepResult meta = solve_meta_step(prob, cfg);
  for (int t = 0; t < cfg.horizon; ++t) {
    const Eigen::RowVectorXd expect = meta.q_traj.row(t) + cfg.dt * meta.qdot_traj.row(t);
    CHECK((meta.q_traj.row(t + 1) - expect).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("plan: trivial goal reached in one meta-step") {
  const BiArmModel model = desk_model();
  const Eigen::VectorXd q0 = desk_home_configuration(model);
  TrajOptProblem prob = hold_problem(model, q0);
  prob.goal_left = ArmGoal::se3(left_ee(model, q0));

  const PlanResult result = plan(prob, TrajOptConfig{});
  CHECK(result.status == PlanStatus::Reached);
  CHECK(result.meta_steps.size() == 1);
}

TEST_CASE("plan: goal outside the workspace is InfeasibleGoal with feedback") {
  const BiArmModel model = desk_model();
  const Eigen::VectorXd q0 = desk_home_configuration(model);
  TrajOptProblem prob = hold_problem(model, q0);
  Pose goal = left_ee(model, q0);
  goal.position = Eigen::Vector3d(2.5, 0.0, 0.3);  // beyond any reach
  prob.goal_left = ArmGoal::se3(goal);

  const PlanResult result = plan(prob, TrajOptConfig{});
  CHECK(result.status == PlanStatus::InfeasibleGoal);
  CHECK(result.feedback.find("cannot reach") != std::string::npos);
  CHECK(result.feedback.find("left-arm") != std::string::npos);
}

TEST_CASE("plan: multi-meta-step reach across the table") {
  const BiArmModel model = desk_model();
  const Eigen::VectorXd q0 = desk_home_configuration(model);
  TrajOptProblem prob = hold_problem(model, q0);
  Pose goal;
  goal.position = Eigen::Vector3d(-0.25, 0.35, 0.35);
  goal.orientation =
      Eigen::Quaterniond(Eigen::AngleAxisd(M_PI, Eigen::Vector3d::UnitY()));  // tool down
  prob.goal_left = ArmGoal::se3(goal);

  TrajOptConfig cfg;
  const PlanResult result = plan(prob, cfg);
  REQUIRE(result.status == PlanStatus::Reached);
  CHECK(result.meta_steps.size() >= 1);

  // telescoping monotonicity over accepted meta-steps
  for (size_t i = 1; i < result.meta_steps.size(); ++i) {
    if (!result.meta_steps[i].converged) continue;
    CHECK(result.meta_steps[i].e_p_T <=
          std::max(result.meta_steps[i - 1].e_p_T, cfg.eps_p) + 1e-12);
    CHECK(result.meta_steps[i].e_r_T <=
          std::max(result.meta_steps[i - 1].e_r_T, cfg.eps_r) + 1e-12);
  }

  // verifier: interpolated violations stay tiny
  const CheckReport report = check_solution(result, prob, cfg);
  CHECK(report.max_violation <= 1e-3);

  // recursive feasibility: zero-velocity continuation of each terminal state
  for (const MetaStepResult& meta : result.meta_steps) {
    const Eigen::VectorXd terminal = meta.q_traj.row(cfg.horizon).transpose();
    CHECK(static_constraint_violation(prob, cfg, terminal) <= cfg.qp_tolerance * 10);
  }
}

TEST_CASE("check_solution: zero motion in free space has zero violations") {
  const BiArmModel model = desk_model();
  const Eigen::VectorXd q0 = desk_home_configuration(model);
  TrajOptProblem prob = hold_problem(model, q0);

  TrajOptConfig cfg;
  PlanResult fake;
  MetaStepResult meta;
  meta.qdot_traj = Eigen::MatrixXd::Zero(cfg.horizon, model.dof());
  meta.q_traj = Eigen::MatrixXd::Zero(cfg.horizon + 1, model.dof());
  for (int t = 0; t <= cfg.horizon; ++t) meta.q_traj.row(t) = q0.transpose();
  fake.meta_steps.push_back(meta);
  CHECK(check_solution(fake, prob, cfg).max_violation == 0.0);
}

TEST_CASE("check_solution: trajectory through an obstacle is flagged") {
  const BiArmModel model = desk_model();
  const Eigen::VectorXd q0 = desk_home_configuration(model);
  TrajOptProblem prob = hold_problem(model, q0);
  // obstacle right on top of the left tool sphere
  const Pose ee = left_ee(model, q0);
  prob.obstacles.push_back(Aabb(ee.position - Eigen::Vector3d::Constant(0.05),
                                ee.position + Eigen::Vector3d::Constant(0.05)));

  TrajOptConfig cfg;
  PlanResult fake;
  MetaStepResult meta;
  meta.qdot_traj = Eigen::MatrixXd::Zero(cfg.horizon, model.dof());
  meta.q_traj = Eigen::MatrixXd::Zero(cfg.horizon + 1, model.dof());
  for (int t = 0; t <= cfg.horizon; ++t) meta.q_traj.row(t) = q0.transpose();
  fake.meta_steps.push_back(meta);
  const CheckReport report = check_solution(fake, prob, cfg);
  CHECK(report.max_violation > cfg.collision_margin);
}

TEST_CASE("determinism: identical inputs give identical plans") {
  const BiArmModel model = desk_model();
  const Eigen::VectorXd q0 = desk_home_configuration(model);
  TrajOptProblem prob = hold_problem(model, q0);
  Pose goal = left_ee(model, q0);
  goal.position += Eigen::Vector3d(0.08, 0.05, 0.04);
  prob.goal_left = ArmGoal::se3(goal);

  const PlanResult a = plan(prob, TrajOptConfig{});
  const PlanResult b = plan(prob, TrajOptConfig{});
  REQUIRE(a.meta_steps.size() == b.meta_steps.size());
  CHECK(a.status == b.status);
  for (size_t i = 0; i < a.meta_steps.size(); ++i) {
    CHECK((a.meta_steps[i].q_traj - b.meta_steps[i].q_traj).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.meta_steps[i].e_p_T == b.meta_steps[i].e_p_T);
  }
}

TEST_CASE("q0 outside limits: projected when tiny, rejected when large") {
  const BiArmModel model = desk_model();
  Eigen::VectorXd q0 = desk_home_configuration(model);

  TrajOptProblem prob = hold_problem(model, q0);
  prob.q0[0] = model.left.joints[0].pos_hi + 5e-7;  // projectable
  prob.normalize();
  CHECK(prob.q0[0] == model.left.joints[0].pos_hi);

  TrajOptProblem bad = hold_problem(model, q0);
  bad.q0[0] = model.left.joints[0].pos_hi + 0.1;
  CHECK_THROWS_AS(bad.normalize(), std::invalid_argument);
}
