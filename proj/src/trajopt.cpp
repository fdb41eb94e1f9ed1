#include "bimanip/trajopt.hpp"

#include <chrono>
#include <cstdio>
#include <stdexcept>

namespace bimanip {

void TrajOptConfig::validate() const {
  if (horizon < 2) throw std::invalid_argument("horizon must be >= 2");
  if (dt <= 0.0) throw std::invalid_argument("dt must be positive");
  if (max_meta_steps < 1) throw std::invalid_argument("max_meta_steps must be >= 1");
  if (eps_p <= 0.0 || eps_r <= 0.0) throw std::invalid_argument("tolerances must be positive");
}

void TrajOptProblem::normalize() {
  if (!model) throw std::invalid_argument("problem has no model");
  if (q0.size() != model->dof()) throw std::invalid_argument("q0 dimension mismatch");
  if (qdot0.size() == 0) qdot0 = Eigen::VectorXd::Zero(model->dof());
  auto project_arm = [&](const ArmModel& arm, int offset) {
    for (int i = 0; i < arm.dof(); ++i) {
      const double lo = arm.joints[i].pos_lo, hi = arm.joints[i].pos_hi;
      double& v = q0[offset + i];
      if (v < lo - 1e-6 || v > hi + 1e-6)
        throw std::invalid_argument("q0 outside joint limits beyond projection tolerance");
      v = std::clamp(v, lo, hi);
    }
  };
  project_arm(model->left, 0);
  project_arm(model->right, model->left.dof());
}

namespace {

struct ArmSlice {
  const ArmModel* arm;
  int offset;  // joint offset in the combined vector
};

std::array<ArmSlice, 2> arm_slices(const BiArmModel& model) {
  return {ArmSlice{&model.left, 0}, ArmSlice{&model.right, model.left.dof()}};
}

/// q_traj rolled out from q0 with the exact single-integrator update.
Eigen::MatrixXd rollout(const Eigen::VectorXd& q0, const Eigen::MatrixXd& v, double dt) {
  const int T = static_cast<int>(v.rows());
  Eigen::MatrixXd q(T + 1, q0.size());
  q.row(0) = q0.transpose();
  for (int t = 0; t < T; ++t) q.row(t + 1) = q.row(t) + dt * v.row(t);
  return q;
}

struct GoalEval {
  double e_p = 0.0;
  double e_r = 0.0;
  double cost = 0.0;  // weighted squared goal error at the terminal knot
};

GoalEval evaluate_goals(const TrajOptProblem& prob, const Eigen::VectorXd& q_T,
                        const GoalWeights& w) {
  GoalEval out;
  double hold_err = 0.0;
  bool any_se3 = false;
  for (const ArmSlice& slice : arm_slices(*prob.model)) {
    const ArmSide side = slice.offset == 0 ? ArmSide::Left : ArmSide::Right;
    const ArmGoal& goal = prob.goal(side);
    const Eigen::VectorXd q_arm = q_T.segment(slice.offset, slice.arm->dof());
    if (goal.kind == ArmGoal::Kind::Se3) {
      any_se3 = true;
      const Pose ee = forward_kinematics(*slice.arm, q_arm);
      const double ep = (ee.position - goal.target.position).norm();
      const double er = orientation_angle(goal.target.orientation, ee.orientation);
      out.e_p = std::max(out.e_p, ep);
      out.e_r = std::max(out.e_r, er);
      out.cost += w.goal_p * ep * ep + w.goal_r * er * er;
    } else if (goal.kind == ArmGoal::Kind::JointHold) {
      const double dev = (q_arm - goal.q_hold).lpNorm<Eigen::Infinity>();
      hold_err = std::max(hold_err, dev);
      out.cost += w.goal_p * (q_arm - goal.q_hold).squaredNorm();
    }
  }
  if (!any_se3) out.e_r = std::max(out.e_r, hold_err);
  return out;
}

struct ViolationSummary {
  double max_violation = 0.0;
  double sum_violation = 0.0;
  std::string worst;

  void add(double v, const char* what) {
    if (v <= 0.0) return;
    sum_violation += v;
    if (v > max_violation) {
      max_violation = v;
      worst = what;
    }
  }
};

/// Nonlinear constraint violations at a single configuration.
/// extra_margin widens the collision/workspace clearance (knot buffer).
void accumulate_static_violations(const TrajOptProblem& prob, const TrajOptConfig& cfg,
                                  const Eigen::VectorXd& q, double extra_margin,
                                  ViolationSummary& out) {
  const BiArmModel& model = *prob.model;
  std::array<std::vector<SphereState>, 2> spheres;
  int si = 0;
  for (const ArmSlice& slice : arm_slices(model))
    spheres[si++] = sphere_centers(*slice.arm, q.segment(slice.offset, slice.arm->dof()));

  // joint position limits
  si = 0;
  for (const ArmSlice& slice : arm_slices(model)) {
    for (int i = 0; i < slice.arm->dof(); ++i) {
      const double qi = q[slice.offset + i];
      out.add(slice.arm->joints[i].pos_lo - qi, "joint lower limit");
      out.add(qi - slice.arm->joints[i].pos_hi, "joint upper limit");
    }
    ++si;
  }
  // workspace containment of every sphere
  for (const auto& arm_spheres : spheres)
    for (const SphereState& s : arm_spheres)
      out.add(signed_distance_point_aabb(s.center, model.workspace) + s.radius + extra_margin,
              "workspace");
  // arm-to-arm
  for (const SphereState& a : spheres[0])
    for (const SphereState& b : spheres[1])
      out.add(cfg.collision_margin + extra_margin -
                  distance_sphere_sphere(a.center, a.radius, b.center, b.radius),
              "arm-arm collision");
  // arm-to-obstacle
  for (const auto& arm_spheres : spheres)
    for (const SphereState& s : arm_spheres)
      for (const Aabb& box : prob.obstacles)
        out.add(cfg.collision_margin + extra_margin -
                    signed_distance_sphere_aabb(s.center, s.radius, box),
                "arm-obstacle collision");
}

/// Merit function for the SQP line search: true cost plus exact penalty on the
/// nonlinear constraint violations at the knots.
double merit(const TrajOptProblem& prob, const TrajOptConfig& cfg, const GoalWeights& w,
             const Eigen::MatrixXd& q_traj, const Eigen::MatrixXd& v) {
  const int T = static_cast<int>(v.rows());
  double value = evaluate_goals(prob, q_traj.row(T).transpose(), w).cost;
  value += w.effort * v.squaredNorm();
  ViolationSummary viol;
  for (int t = 1; t <= T; ++t)
    accumulate_static_violations(prob, cfg, q_traj.row(t).transpose(), cfg.knot_margin_buffer,
                                 viol);
  return value + cfg.slack_penalty * viol.sum_violation;
}

}  // namespace

double static_constraint_violation(const TrajOptProblem& prob, const TrajOptConfig& cfg,
                                   const Eigen::VectorXd& q) {
  ViolationSummary viol;
  accumulate_static_violations(prob, cfg, q, 0.0, viol);
  return viol.max_violation;
}

Subproblem build_subproblem(const TrajOptProblem& prob, const Eigen::MatrixXd& q_traj_lin,
                            const Eigen::MatrixXd& qdot_traj_lin, const TrajOptConfig& cfg,
                            const GoalWeights* weights_override) {
  const BiArmModel& model = *prob.model;
  const int n = model.dof();
  const int T = cfg.horizon;
  if (q_traj_lin.rows() != T + 1 || q_traj_lin.cols() != n || qdot_traj_lin.rows() != T ||
      qdot_traj_lin.cols() != n)
    throw std::invalid_argument("linearization trajectory has wrong dimensions");
  const GoalWeights& w = weights_override ? *weights_override : cfg.weights;
  const int nv = T * n;
  const double dt = cfg.dt;
  const double inf = std::numeric_limits<double>::infinity();

  Subproblem sub;
  sub.num_velocity_vars = nv;

  std::vector<Eigen::Triplet<double>> p_trips;
  std::vector<Eigen::Triplet<double>> a_trips;
  std::vector<double> lower, upper;
  int row = 0;
  auto var_v = [&](int t, int j) { return t * n + j; };

  // ---- effort cost + tiny regularization
  for (int i = 0; i < nv; ++i) p_trips.emplace_back(i, i, 2.0 * w.effort + 1e-8);

  // ---- goal costs (Gauss-Newton at the terminal knot)
  // cost = ||residual + jac_r dq_T||^2 with dq_T = dt * sum_s (v_s - v_lin,s)
  Eigen::VectorXd q_lin_terms = Eigen::VectorXd::Zero(nv);
  const Eigen::VectorXd q_T = q_traj_lin.row(T).transpose();
  for (const ArmSlice& slice : arm_slices(model)) {
    const ArmSide side = slice.offset == 0 ? ArmSide::Left : ArmSide::Right;
    const ArmGoal& goal = prob.goal(side);
    if (goal.kind == ArmGoal::Kind::None) continue;
    const int na = slice.arm->dof();
    const Eigen::VectorXd q_arm = q_T.segment(slice.offset, na);

    Eigen::MatrixXd jac_r;  // residual Jacobian w.r.t. this arm's joints
    Eigen::VectorXd residual;
    if (goal.kind == ArmGoal::Kind::Se3) {
      const Pose ee = forward_kinematics(*slice.arm, q_arm);
      const Eigen::MatrixXd jac = ee_jacobian(*slice.arm, q_arm);
      residual.resize(6);
      residual.head<3>() = std::sqrt(w.goal_p) * (ee.position - goal.target.position);
      residual.tail<3>() =
          std::sqrt(w.goal_r) * orientation_error(goal.target.orientation, ee.orientation);
      jac_r.resize(6, na);
      jac_r.topRows<3>() = std::sqrt(w.goal_p) * jac.topRows<3>();
      jac_r.bottomRows<3>() = -std::sqrt(w.goal_r) * jac.bottomRows<3>();
    } else {
      residual = std::sqrt(w.goal_p) * (q_arm - goal.q_hold);
      jac_r = std::sqrt(w.goal_p) * Eigen::MatrixXd::Identity(na, na);
    }

    const Eigen::MatrixXd hess = 2.0 * (jac_r.transpose() * jac_r);  // arm-joint space
    const Eigen::VectorXd grad = 2.0 * (jac_r.transpose() * residual);
    for (int s1 = 0; s1 < T; ++s1)
      for (int j1 = 0; j1 < na; ++j1)
        for (int s2 = 0; s2 < T; ++s2)
          for (int j2 = 0; j2 < na; ++j2) {
            const double h = dt * dt * hess(j1, j2);
            if (h != 0.0)
              p_trips.emplace_back(var_v(s1, slice.offset + j1), var_v(s2, slice.offset + j2), h);
          }
    Eigen::VectorXd vlin_sum = Eigen::VectorXd::Zero(na);
    for (int s = 0; s < T; ++s)
      vlin_sum += qdot_traj_lin.row(s).segment(slice.offset, na).transpose();
    const Eigen::VectorXd lin = dt * grad - dt * dt * (hess * vlin_sum);
    for (int s = 0; s < T; ++s)
      for (int j = 0; j < na; ++j) q_lin_terms[var_v(s, slice.offset + j)] += lin[j];
  }

  // ---- hard rows: velocity limits, trust region, position limits
  for (int t = 0; t < T; ++t)
    for (const ArmSlice& slice : arm_slices(model))
      for (int j = 0; j < slice.arm->dof(); ++j) {
        a_trips.emplace_back(row, var_v(t, slice.offset + j), 1.0);
        lower.push_back(-slice.arm->joints[j].vel_limit);
        upper.push_back(slice.arm->joints[j].vel_limit);
        ++row;
      }
  sub.counts.velocity_rows = row;

  for (int t = 0; t < T; ++t)
    for (int j = 0; j < n; ++j) {
      a_trips.emplace_back(row, var_v(t, j), 1.0);
      lower.push_back(qdot_traj_lin(t, j) - cfg.trust_region);
      upper.push_back(qdot_traj_lin(t, j) + cfg.trust_region);
      ++row;
    }
  sub.counts.trust_rows = row - sub.counts.velocity_rows;

  const Eigen::VectorXd q0 = q_traj_lin.row(0).transpose();
  for (int t = 1; t <= T; ++t)
    for (const ArmSlice& slice : arm_slices(model))
      for (int j = 0; j < slice.arm->dof(); ++j) {
        for (int s = 0; s < t; ++s) a_trips.emplace_back(row, var_v(s, slice.offset + j), dt);
        lower.push_back(slice.arm->joints[j].pos_lo - q0[slice.offset + j]);
        upper.push_back(slice.arm->joints[j].pos_hi - q0[slice.offset + j]);
        ++row;
      }
  sub.counts.position_rows =
      row - sub.counts.velocity_rows - sub.counts.trust_rows;

  // ---- soft rows (workspace + collision), one slack per constraint bundle
  struct SoftRow {
    // one-sided row: sum_j coeff_j * v_j - slack <= ub   (coeffs over v block)
    std::vector<std::pair<int, double>> coeffs;
    double ub;
    int slack;
  };
  std::vector<SoftRow> soft_rows;
  int num_slacks = 0;
  int workspace_rows = 0, arm_arm_rows = 0, obstacle_rows = 0;

  // per-knot sphere data at the linearization point
  std::array<std::vector<SphereState>, 2> sph;
  std::array<std::vector<Eigen::MatrixXd>, 2> sph_jac;  // 3 x na each

  auto chain_coeffs = [&](int t, int arm_offset, const Eigen::RowVector3d& normal,
                          const Eigen::MatrixXd& jac3, std::vector<std::pair<int, double>>& out) {
    // normal^T * J * dq_t with dq_t = dt * sum_{s<t} dv_s
    const Eigen::RowVectorXd g = normal * jac3;  // 1 x na
    for (int s = 0; s < t; ++s)
      for (int j = 0; j < g.size(); ++j)
        if (g[j] != 0.0) out.emplace_back(var_v(s, arm_offset + j), dt * g[j]);
  };

  const double clear_margin = cfg.collision_margin + cfg.knot_margin_buffer;
  for (int t = 1; t <= T; ++t) {
    int ai = 0;
    for (const ArmSlice& slice : arm_slices(model)) {
      const Eigen::VectorXd q_arm = q_traj_lin.row(t).segment(slice.offset, slice.arm->dof());
      sph[ai] = sphere_centers(*slice.arm, q_arm);
      sph_jac[ai].clear();
      for (size_t s = 0; s < sph[ai].size(); ++s)
        sph_jac[ai].push_back(sphere_point_jacobian(*slice.arm, q_arm, static_cast<int>(s)));
      ++ai;
    }

    // workspace: each sphere center inside the box shrunk by radius + buffer,
    // 6 one-sided faces sharing one slack
    ai = 0;
    for (const ArmSlice& slice : arm_slices(model)) {
      for (size_t s = 0; s < sph[ai].size(); ++s) {
        const SphereState& sp = sph[ai][s];
        const int slack = num_slacks++;
        for (int axis = 0; axis < 3; ++axis) {
          Eigen::RowVector3d normal = Eigen::RowVector3d::Zero();
          normal[axis] = 1.0;
          // upper face: c_a + n J dq <= max_a - r - buf
          SoftRow up;
          up.slack = slack;
          chain_coeffs(t, slice.offset, normal, sph_jac[ai][s], up.coeffs);
          up.ub = model.workspace.max_corner[axis] - sp.radius - cfg.knot_margin_buffer -
                  sp.center[axis];
          // fold the linearization offset: coefficients act on v, constraint was
          // derived for dv; shift ub by coeff . v_lin
          soft_rows.push_back(std::move(up));
          // lower face: -(c_a + n J dq) <= -(min_a + r + buf)
          SoftRow dn;
          dn.slack = slack;
          chain_coeffs(t, slice.offset, -normal, sph_jac[ai][s], dn.coeffs);
          dn.ub = sp.center[axis] - (model.workspace.min_corner[axis] + sp.radius +
                                     cfg.knot_margin_buffer);
          soft_rows.push_back(std::move(dn));
          workspace_rows += 2;
        }
      }
      ++ai;
    }

    // arm-to-arm sphere pairs
    for (size_t i = 0; i < sph[0].size(); ++i)
      for (size_t j = 0; j < sph[1].size(); ++j) {
        const SphereState& a = sph[0][i];
        const SphereState& b = sph[1][j];
        const double dist = distance_sphere_sphere(a.center, a.radius, b.center, b.radius);
        if (dist > cfg.cull_distance) continue;
        Eigen::Vector3d diff = a.center - b.center;
        const double norm = diff.norm();
        const Eigen::RowVector3d normal =
            norm > 1e-9 ? (diff / norm).transpose().eval() : Eigen::RowVector3d(1, 0, 0);
        // require: dist + n.(J_a dq_a - J_b dq_b) >= clear_margin - slack
        SoftRow r;
        r.slack = num_slacks++;
        chain_coeffs(t, 0, -normal, sph_jac[0][i], r.coeffs);
        chain_coeffs(t, model.left.dof(), normal, sph_jac[1][j], r.coeffs);
        r.ub = dist - clear_margin;
        soft_rows.push_back(std::move(r));
        ++arm_arm_rows;
      }

    // arm-to-obstacle
    ai = 0;
    for (const ArmSlice& slice : arm_slices(model)) {
      for (size_t s = 0; s < sph[ai].size(); ++s) {
        const SphereState& sp = sph[ai][s];
        for (const Aabb& box : prob.obstacles) {
          const double dist = signed_distance_sphere_aabb(sp.center, sp.radius, box);
          if (dist > cfg.cull_distance) continue;
          const Eigen::RowVector3d normal =
              sphere_aabb_distance_gradient(sp.center, box).transpose();
          SoftRow r;
          r.slack = num_slacks++;
          chain_coeffs(t, slice.offset, -normal, sph_jac[ai][s], r.coeffs);
          r.ub = dist - clear_margin;
          soft_rows.push_back(std::move(r));
          ++obstacle_rows;
        }
      }
      ++ai;
    }
  }
  sub.counts.workspace_rows = workspace_rows;
  sub.counts.arm_arm_rows = arm_arm_rows;
  sub.counts.obstacle_rows = obstacle_rows;
  sub.num_slacks = num_slacks;

  // The soft-row coefficients were written against dv (deviation from the
  // linearization trajectory); shift the bounds so rows act on v directly.
  const int total_vars = nv + num_slacks;
  for (SoftRow& r : soft_rows) {
    double shift = 0.0;
    for (const auto& [var, coeff] : r.coeffs) {
      const int t = var / n, j = var % n;
      shift += coeff * qdot_traj_lin(t, j);
    }
    r.ub += shift;
  }

  for (const SoftRow& r : soft_rows) {
    for (const auto& [var, coeff] : r.coeffs) a_trips.emplace_back(row, var, coeff);
    a_trips.emplace_back(row, nv + r.slack, -1.0);
    lower.push_back(-inf);
    upper.push_back(r.ub);
    ++row;
  }
  // slack bounds s >= 0
  for (int i = 0; i < num_slacks; ++i) {
    a_trips.emplace_back(row, nv + i, 1.0);
    lower.push_back(0.0);
    upper.push_back(inf);
    ++row;
  }
  sub.counts.slack_bound_rows = num_slacks;

  // slack penalty: linear exact penalty plus a whisper of curvature
  for (int i = 0; i < num_slacks; ++i) p_trips.emplace_back(nv + i, nv + i, 2e-6);

  sub.qp.P.resize(total_vars, total_vars);
  sub.qp.P.setFromTriplets(p_trips.begin(), p_trips.end());
  sub.qp.q = Eigen::VectorXd::Zero(total_vars);
  sub.qp.q.head(nv) = q_lin_terms;
  sub.qp.q.tail(num_slacks).setConstant(cfg.slack_penalty);
  sub.qp.A.resize(row, total_vars);
  sub.qp.A.setFromTriplets(a_trips.begin(), a_trips.end());
  sub.qp.lower = Eigen::Map<Eigen::VectorXd>(lower.data(), row);
  sub.qp.upper = Eigen::Map<Eigen::VectorXd>(upper.data(), row);
  return sub;
}

MetaStepResult solve_meta_step(const TrajOptProblem& prob, const TrajOptConfig& cfg,
                               std::pair<double, double> prev_errors) {
  cfg.validate();
  TrajOptProblem p = prob;
  p.normalize();
  const auto t_start = std::chrono::steady_clock::now();
  const int n = p.model->dof();
  const int T = cfg.horizon;

  MetaStepResult res;
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(T, n);
  Eigen::MatrixXd q_traj = rollout(p.q0, v, cfg.dt);

  GoalWeights weights = cfg.weights;
  const double e_p_allow = std::max(prev_errors.first, cfg.eps_p);
  const double e_r_allow = std::max(prev_errors.second, cfg.eps_r);

  QpSettings qp_settings;
  qp_settings.eps_abs = cfg.qp_tolerance;
  // the slack penalty puts |q| near 1e4, so the relative term must stay small
  qp_settings.eps_rel = 0.0;
  qp_settings.per_component_dual_tol = true;
  qp_settings.max_iters = cfg.qp_max_iters;
  qp_settings.polish = true;

  bool step_converged = false;
  Eigen::VectorXd warm_x, warm_y;
  int escalations = 0;
  while (res.sqp_iters < cfg.sqp_max_iters) {
    ++res.sqp_iters;
    const Subproblem sub = build_subproblem(p, q_traj, v, cfg, &weights);
    res.inequality_count = sub.counts.inequality_count();
    const Eigen::VectorXd* warm_x_ptr =
        warm_x.size() == sub.qp.num_vars() ? &warm_x : nullptr;
    const Eigen::VectorXd* warm_y_ptr =
        warm_y.size() == sub.qp.num_constraints() ? &warm_y : nullptr;
    const QpSolution sol = solve_qp(sub.qp, qp_settings, warm_x_ptr, warm_y_ptr);
    res.qp_iters += sol.iterations;
    if (!sol.solved() && sol.status != QpStatus::MaxIterations) break;
    warm_x = sol.x;
    warm_y = sol.y;
    qp_settings.rho_init = sol.final_rho;

    Eigen::MatrixXd v_star(T, n);
    for (int t = 0; t < T; ++t) v_star.row(t) = sol.x.segment(t * n, n).transpose();
    const Eigen::MatrixXd dv = v_star - v;
    const double step_norm = dv.cwiseAbs().maxCoeff();
    // near stationarity the QP must be solved below the step-norm scale for
    // the 1e-5 convergence test to be meaningful
    qp_settings.eps_abs = std::clamp(0.05 * step_norm, 1e-7, cfg.qp_tolerance);
    if (getenv("BIMANIP_SQP_DEBUG")) {
      const GoalEval ge = evaluate_goals(p, q_traj.row(T).transpose(), cfg.weights);
      fprintf(stderr,
              "[sqp %d] qp_status=%d qp_iters=%d step=%.2e e_p=%.4f e_r=%.4f merit=%.6f "
              "kkt_stat=%.2e kkt_pri=%.2e obj=%.5f\n",
              res.sqp_iters, (int)sol.status, sol.iterations, step_norm, ge.e_p, ge.e_r,
              merit(p, cfg, weights, q_traj, v), sol.dual_residual, sol.primal_residual,
              sol.objective);
    }
    if (step_norm < 1e-5) {
      step_converged = true;
    } else {
      // backtracking line search on the exact-penalty merit
      const double m0 = merit(p, cfg, weights, q_traj, v);
      double alpha = 1.0;
      bool accepted = false;
      for (int back = 0; back < 6; ++back) {
        const Eigen::MatrixXd v_try = v + alpha * dv;
        const Eigen::MatrixXd q_try = rollout(p.q0, v_try, cfg.dt);
        if (merit(p, cfg, weights, q_try, v_try) < m0 - 1e-10) {
          v = v_try;
          q_traj = q_try;
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) step_converged = true;  // no descent available: stalled
    }

    if (step_converged) {
      const GoalEval eval = evaluate_goals(p, q_traj.row(T).transpose(), cfg.weights);
      // escalate the terminal penalty while the terminal tolerances are not
      // met, but only in the near-goal regime where the error is
      // weight-limited rather than horizon-limited
      const bool want_tighter =
          eval.e_p <= 0.10 && (eval.e_p > cfg.eps_p || eval.e_r > cfg.eps_r);
      if (!want_tighter || escalations >= 3 || res.sqp_iters >= cfg.sqp_max_iters) break;
      weights.goal_p *= 10.0;
      weights.goal_r *= 10.0;
      ++escalations;
      step_converged = false;
    }
  }

  res.q_traj = q_traj;
  res.qdot_traj = v;
  const GoalEval eval = evaluate_goals(p, q_traj.row(T).transpose(), cfg.weights);
  res.e_p_T = eval.e_p;
  res.e_r_T = eval.e_r;
  ViolationSummary viol;
  for (int t = 1; t <= T; ++t)
    accumulate_static_violations(p, cfg, q_traj.row(t).transpose(), 0.0, viol);
  res.constraint_violation_max = viol.max_violation;
  res.converged = step_converged && res.e_p_T <= e_p_allow && res.e_r_T <= e_r_allow &&
                  viol.max_violation <= cfg.qp_tolerance * 10.0;
  res.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() -
                                                          t_start)
                    .count();
  return res;
}

namespace {

std::string format_goal(const TrajOptProblem& prob) {
  char buf[96];
  for (ArmSide side : {ArmSide::Left, ArmSide::Right}) {
    const ArmGoal& g = prob.goal(side);
    if (g.kind == ArmGoal::Kind::Se3) {
      std::snprintf(buf, sizeof(buf), "%s/pose(%.3f, %.3f, %.3f)", arm_name(side),
                    g.target.position.x(), g.target.position.y(), g.target.position.z());
      return buf;
    }
  }
  return "joint-hold";
}

}  // namespace

PlanResult plan(const TrajOptProblem& prob, const TrajOptConfig& cfg) {
  cfg.validate();
  TrajOptProblem current = prob;
  current.normalize();

  PlanResult result;
  std::pair<double, double> prev{std::numeric_limits<double>::infinity(),
                                 std::numeric_limits<double>::infinity()};
  int non_improving = 0;
  for (int step = 0; step < cfg.max_meta_steps; ++step) {
    MetaStepResult meta = solve_meta_step(current, cfg, prev);
    const double e_p = meta.e_p_T;
    const double e_r = meta.e_r_T;
    const Eigen::VectorXd terminal = meta.q_traj.row(cfg.horizon).transpose();
    const Eigen::VectorXd terminal_vel = meta.qdot_traj.row(cfg.horizon - 1).transpose();
    result.meta_steps.push_back(std::move(meta));

    if (e_p <= cfg.eps_p && e_r <= cfg.eps_r) {
      result.status = PlanStatus::Reached;
      result.feedback = "reached";
      return result;
    }
    // stall rule: two consecutive meta-steps without measurable e_p progress
    if (step > 0 && e_p > cfg.eps_p && prev.first - e_p <= 1e-4) {
      if (++non_improving >= 2) {
        result.status = PlanStatus::InfeasibleGoal;
        result.feedback = "cannot reach the object: " + format_goal(current);
        return result;
      }
    } else {
      non_improving = 0;
    }
    prev = {e_p, e_r};
    current.q0 = terminal;
    current.qdot0 = terminal_vel;
  }
  result.status = PlanStatus::Timeout;
  result.feedback = "meta-step cap reached before convergence";
  return result;
}

CheckReport check_solution(const PlanResult& result, const TrajOptProblem& prob,
                           const TrajOptConfig& cfg) {
  TrajOptProblem p = prob;
  p.normalize();
  CheckReport report;
  ViolationSummary all, knots_only;
  for (const MetaStepResult& meta : result.meta_steps) {
    const int T = static_cast<int>(meta.qdot_traj.rows());
    for (int t = 0; t < T; ++t) {
      // velocity limits at each step
      for (const ArmSlice& slice : arm_slices(*p.model))
        for (int j = 0; j < slice.arm->dof(); ++j)
          all.add(std::abs(meta.qdot_traj(t, slice.offset + j)) - slice.arm->joints[j].vel_limit,
                  "velocity limit");
      // knot + 10x interpolation between knots
      for (int sub = 0; sub <= 10; ++sub) {
        const double f = sub / 10.0;
        const Eigen::VectorXd q =
            (1.0 - f) * meta.q_traj.row(t).transpose() + f * meta.q_traj.row(t + 1).transpose();
        accumulate_static_violations(p, cfg, q, 0.0, all);
        if (sub == 0 || sub == 10) accumulate_static_violations(p, cfg, q, 0.0, knots_only);
      }
    }
  }
  report.max_violation = all.max_violation;
  report.max_violation_knots = knots_only.max_violation;
  report.worst_constraint = all.worst;
  return report;
}

}  // namespace bimanip
