#include "bimanip/qp.hpp"

#include <Eigen/SparseCholesky>

#include <limits>
#include <stdexcept>
#include <vector>

namespace bimanip {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kRhoEq = 1e3;     // equality rows get rho0 * kRhoEq
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;

struct Scaling {
  Eigen::VectorXd d;  // variable scaling
  Eigen::VectorXd e;  // constraint scaling
  double c = 1.0;     // cost scaling
};

/// Modified Ruiz equilibration of [P A'; A 0] plus cost scaling.
Scaling ruiz_equilibrate(Eigen::SparseMatrix<double>& P, Eigen::VectorXd& q,
                         Eigen::SparseMatrix<double>& A, Eigen::VectorXd& l, Eigen::VectorXd& u,
                         int iters = 10) {
  const int n = static_cast<int>(P.rows());
  const int m = static_cast<int>(A.rows());
  Scaling s;
  s.d = Eigen::VectorXd::Ones(n);
  s.e = Eigen::VectorXd::Ones(m);

  for (int it = 0; it < iters; ++it) {
    Eigen::VectorXd col_norm = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < P.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator v(P, k); v; ++v) {
        col_norm[v.col()] = std::max(col_norm[v.col()], std::abs(v.value()));
        col_norm[v.row()] = std::max(col_norm[v.row()], std::abs(v.value()));
      }
    Eigen::VectorXd row_norm = Eigen::VectorXd::Zero(m);
    for (int k = 0; k < A.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator v(A, k); v; ++v) {
        col_norm[v.col()] = std::max(col_norm[v.col()], std::abs(v.value()));
        row_norm[v.row()] = std::max(row_norm[v.row()], std::abs(v.value()));
      }
    Eigen::VectorXd dd(n), ee(m);
    for (int i = 0; i < n; ++i) dd[i] = col_norm[i] > 1e-12 ? 1.0 / std::sqrt(col_norm[i]) : 1.0;
    for (int i = 0; i < m; ++i) ee[i] = row_norm[i] > 1e-12 ? 1.0 / std::sqrt(row_norm[i]) : 1.0;

    P = dd.asDiagonal() * P * dd.asDiagonal();
    A = ee.asDiagonal() * A * dd.asDiagonal();
    q = dd.cwiseProduct(q);
    for (int i = 0; i < m; ++i) {
      if (std::isfinite(l[i])) l[i] *= ee[i];
      if (std::isfinite(u[i])) u[i] *= ee[i];
    }
    s.d = s.d.cwiseProduct(dd);
    s.e = s.e.cwiseProduct(ee);

    // cost scaling
    Eigen::VectorXd pcol = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < P.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator v(P, k); v; ++v)
        pcol[v.col()] = std::max(pcol[v.col()], std::abs(v.value()));
    const double mean_p = pcol.size() > 0 ? pcol.mean() : 0.0;
    const double qn = q.lpNorm<Eigen::Infinity>();
    double gamma = 1.0 / std::max(1e-12, std::max(mean_p, qn));
    gamma = std::min(gamma, 1e6);
    P *= gamma;
    q *= gamma;
    s.c *= gamma;
  }
  return s;
}

struct KktFactorization {
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt;
  bool ok = false;

  void factor(const Eigen::SparseMatrix<double>& P, const Eigen::SparseMatrix<double>& A,
              double sigma, const Eigen::VectorXd& rho) {
    const int n = static_cast<int>(P.rows());
    const int m = static_cast<int>(A.rows());
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(P.nonZeros() + 2 * A.nonZeros() + n + m);
    for (int k = 0; k < P.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator v(P, k); v; ++v)
        trips.emplace_back(static_cast<int>(v.row()), static_cast<int>(v.col()), v.value());
    for (int i = 0; i < n; ++i) trips.emplace_back(i, i, sigma);
    for (int k = 0; k < A.outerSize(); ++k)
      for (Eigen::SparseMatrix<double>::InnerIterator v(A, k); v; ++v) {
        trips.emplace_back(n + static_cast<int>(v.row()), static_cast<int>(v.col()), v.value());
        trips.emplace_back(static_cast<int>(v.col()), n + static_cast<int>(v.row()), v.value());
      }
    for (int i = 0; i < m; ++i) trips.emplace_back(n + i, n + i, -1.0 / rho[i]);
    Eigen::SparseMatrix<double> kkt(n + m, n + m);
    kkt.setFromTriplets(trips.begin(), trips.end());
    ldlt.compute(kkt);
    ok = ldlt.info() == Eigen::Success;
  }
};

double inf_norm(const Eigen::VectorXd& v) {
  return v.size() > 0 ? v.lpNorm<Eigen::Infinity>() : 0.0;
}

/// Active-set polish: solves the equality-constrained KKT system on the rows
/// the duals mark active, with light regularization and iterative refinement.
bool polish_solution(const QpProblem& prob, Eigen::VectorXd& x, Eigen::VectorXd& y) {
  const int n = prob.num_vars();
  const int m = prob.num_constraints();
  const double eps_active = 1e-7;

  Eigen::VectorXd ax = prob.A * x;
  std::vector<int> active;
  std::vector<double> bound;
  for (int i = 0; i < m; ++i) {
    const bool lower_act =
        (y[i] < -eps_active || ax[i] - prob.lower[i] < eps_active) && std::isfinite(prob.lower[i]);
    const bool upper_act =
        (y[i] > eps_active || prob.upper[i] - ax[i] < eps_active) && std::isfinite(prob.upper[i]);
    if (prob.lower[i] == prob.upper[i]) {
      active.push_back(i);
      bound.push_back(prob.lower[i]);
    } else if (upper_act && !lower_act) {
      active.push_back(i);
      bound.push_back(prob.upper[i]);
    } else if (lower_act && !upper_act) {
      active.push_back(i);
      bound.push_back(prob.lower[i]);
    }
  }
  const int k = static_cast<int>(active.size());
  const double delta = 1e-9;

  // map active row -> compact index for the reduced system
  std::vector<int> row_slot(m, -1);
  for (int j = 0; j < k; ++j) row_slot[active[j]] = j;

  std::vector<Eigen::Triplet<double>> trips;
  for (int c = 0; c < prob.P.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator v(prob.P, c); v; ++v)
      trips.emplace_back(static_cast<int>(v.row()), static_cast<int>(v.col()), v.value());
  for (int i = 0; i < n; ++i) trips.emplace_back(i, i, delta);
  for (int c = 0; c < prob.A.outerSize(); ++c)
    for (Eigen::SparseMatrix<double>::InnerIterator v(prob.A, c); v; ++v) {
      const int j = row_slot[v.row()];
      if (j < 0) continue;
      trips.emplace_back(n + j, static_cast<int>(v.col()), v.value());
      trips.emplace_back(static_cast<int>(v.col()), n + j, v.value());
    }
  for (int j = 0; j < k; ++j) trips.emplace_back(n + j, n + j, -delta);

  Eigen::SparseMatrix<double> kkt(n + k, n + k);
  kkt.setFromTriplets(trips.begin(), trips.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(kkt);
  if (ldlt.info() != Eigen::Success) return false;

  Eigen::VectorXd rhs(n + k);
  rhs.head(n) = -prob.q;
  for (int j = 0; j < k; ++j) rhs[n + j] = bound[j];

  // iterative refinement against the unregularized KKT operator
  auto apply_kkt = [&](const Eigen::VectorXd& t) {
    Eigen::VectorXd out(n + k);
    const Eigen::VectorXd xt = t.head(n);
    const Eigen::VectorXd nu = t.tail(k);
    Eigen::VectorXd atn = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd axk = Eigen::VectorXd::Zero(k);
    for (int c = 0; c < prob.A.outerSize(); ++c)
      for (Eigen::SparseMatrix<double>::InnerIterator v(prob.A, c); v; ++v) {
        const int j = row_slot[v.row()];
        if (j < 0) continue;
        atn[v.col()] += v.value() * nu[j];
        axk[j] += v.value() * xt[v.col()];
      }
    out.head(n) = prob.P * xt + atn;
    out.tail(k) = axk;
    return out;
  };
  Eigen::VectorXd t = Eigen::VectorXd::Zero(n + k);
  for (int pass = 0; pass < 6; ++pass) t += ldlt.solve(rhs - apply_kkt(t));

  Eigen::VectorXd x_pol = t.head(n);
  Eigen::VectorXd y_pol = Eigen::VectorXd::Zero(m);
  for (int j = 0; j < k; ++j) y_pol[active[j]] = t[n + j];

  const KktResiduals before = kkt_residuals(prob, x, y);
  const KktResiduals after = kkt_residuals(prob, x_pol, y_pol);
  if (after.max() < before.max()) {
    x = x_pol;
    y = y_pol;
    return true;
  }
  return false;
}

}  // namespace

KktResiduals kkt_residuals(const QpProblem& prob, const Eigen::VectorXd& x,
                           const Eigen::VectorXd& y) {
  KktResiduals r;
  r.stationarity = inf_norm(prob.P * x + prob.q + prob.A.transpose() * y);
  const Eigen::VectorXd ax = prob.A * x;
  for (int i = 0; i < prob.num_constraints(); ++i) {
    double viol = 0.0;
    if (std::isfinite(prob.upper[i])) viol = std::max(viol, ax[i] - prob.upper[i]);
    if (std::isfinite(prob.lower[i])) viol = std::max(viol, prob.lower[i] - ax[i]);
    r.primal = std::max(r.primal, viol);
    if (prob.lower[i] == prob.upper[i]) continue;  // equality rows have free sign
    if (y[i] > 0.0 && std::isfinite(prob.upper[i]))
      r.complementarity = std::max(r.complementarity, std::abs(y[i] * (ax[i] - prob.upper[i])));
    if (y[i] < 0.0 && std::isfinite(prob.lower[i]))
      r.complementarity = std::max(r.complementarity, std::abs(y[i] * (ax[i] - prob.lower[i])));
  }
  return r;
}

QpSolution solve_qp(const QpProblem& problem, const QpSettings& settings,
                    const Eigen::VectorXd* warm_x, const Eigen::VectorXd* warm_y) {
  const int n = problem.num_vars();
  const int m = problem.num_constraints();
  if (problem.q.size() != n || problem.A.cols() != n || problem.lower.size() != m ||
      problem.upper.size() != m)
    throw std::invalid_argument("solve_qp: inconsistent problem dimensions");

  // scaled working copies
  Eigen::SparseMatrix<double> P = problem.P;
  Eigen::SparseMatrix<double> A = problem.A;
  Eigen::VectorXd q = problem.q;
  Eigen::VectorXd l = problem.lower;
  Eigen::VectorXd u = problem.upper;

  Scaling sc;
  if (settings.scaling) {
    sc = ruiz_equilibrate(P, q, A, l, u);
  } else {
    sc.d = Eigen::VectorXd::Ones(n);
    sc.e = Eigen::VectorXd::Ones(m);
  }

  Eigen::VectorXd rho(m);
  double rho_bar = settings.rho_init > 0.0 ? settings.rho_init : settings.rho0;
  auto fill_rho = [&](double base) {
    for (int i = 0; i < m; ++i)
      rho[i] = (l[i] == u[i]) ? std::clamp(base * kRhoEq, kRhoMin, kRhoMax)
                              : std::clamp(base, kRhoMin, kRhoMax);
  };
  fill_rho(rho_bar);

  KktFactorization kkt;
  kkt.factor(P, A, settings.sigma, rho);

  QpSolution sol;
  sol.x = Eigen::VectorXd::Zero(n);
  sol.y = Eigen::VectorXd::Zero(m);
  if (warm_x && warm_x->size() == n) sol.x = sc.d.cwiseInverse().cwiseProduct(*warm_x);
  Eigen::VectorXd z = A * sol.x;
  if (warm_y && warm_y->size() == m)
    sol.y = sc.c * sc.e.cwiseInverse().cwiseProduct(*warm_y);

  Eigen::VectorXd x_prev_check = sol.x, y_prev_check = sol.y;

  auto unscale_x = [&](const Eigen::VectorXd& xs) { return sc.d.cwiseProduct(xs).eval(); };
  auto unscale_y = [&](const Eigen::VectorXd& ys) {
    return (sc.e.cwiseProduct(ys) / sc.c).eval();
  };

  Eigen::VectorXd rhs(n + m), xz_tilde(n + m);
  int it = 0;
  int last_polish_attempt = 0;
  for (it = 1; it <= settings.max_iters; ++it) {
    // x/nu step
    rhs.head(n) = settings.sigma * sol.x - q;
    rhs.tail(m) = z - sol.y.cwiseQuotient(rho);
    xz_tilde = kkt.ldlt.solve(rhs);
    const Eigen::VectorXd x_tilde = xz_tilde.head(n);
    const Eigen::VectorXd z_tilde = z + (xz_tilde.tail(m) - sol.y).cwiseQuotient(rho);

    // relaxed updates
    const Eigen::VectorXd x_next = settings.alpha * x_tilde + (1.0 - settings.alpha) * sol.x;
    const Eigen::VectorXd z_relaxed = settings.alpha * z_tilde + (1.0 - settings.alpha) * z;
    Eigen::VectorXd z_next = z_relaxed + sol.y.cwiseQuotient(rho);
    z_next = z_next.cwiseMax(l).cwiseMin(u);
    sol.y = sol.y + rho.cwiseProduct(z_relaxed - z_next);
    sol.x = x_next;
    z = z_next;

    if (it % settings.check_interval != 0 && it != settings.max_iters) continue;

    // unscaled residuals
    const Eigen::VectorXd xu = unscale_x(sol.x);
    const Eigen::VectorXd yu = unscale_y(sol.y);
    const Eigen::VectorXd axu = problem.A * xu;
    const Eigen::VectorXd zu = sc.e.cwiseInverse().cwiseProduct(z);
    const double pri_res = inf_norm(axu - zu);
    const Eigen::VectorXd dres = problem.P * xu + problem.q + problem.A.transpose() * yu;
    const double dua_res = inf_norm(dres);
    const double pri_tol =
        settings.eps_abs + settings.eps_rel * std::max(inf_norm(axu), inf_norm(zu));
    const double dua_tol =
        settings.eps_abs +
        settings.eps_rel * std::max({inf_norm(problem.P * xu), inf_norm(problem.q),
                                     inf_norm(problem.A.transpose() * yu)});
    bool dual_ok = dua_res <= dua_tol;
    if (!dual_ok && settings.per_component_dual_tol) {
      dual_ok = true;
      for (int i = 0; i < n && dual_ok; ++i)
        dual_ok = std::abs(dres[i]) <= settings.eps_abs * (1.0 + std::abs(problem.q[i]));
    }
    if (pri_res <= pri_tol && dual_ok) {
      sol.status = QpStatus::Solved;
      sol.primal_residual = pri_res;
      sol.dual_residual = dua_res;
      break;
    }
    // near convergence, an exact active-set polish can close the gap ADMM's
    // linear tail would take thousands of iterations to cover
    if (settings.polish && pri_res <= std::max(100.0 * pri_tol, 1e-5) &&
        it - last_polish_attempt >= 100) {
      last_polish_attempt = it;
      Eigen::VectorXd xp = xu, yp = yu;
      if (polish_solution(problem, xp, yp)) {
        const KktResiduals r = kkt_residuals(problem, xp, yp);
        if (r.primal <= settings.eps_abs && r.stationarity <= settings.eps_abs &&
            r.complementarity <= settings.eps_abs) {
          sol.status = QpStatus::Solved;
          sol.x = sc.d.cwiseInverse().cwiseProduct(xp);  // back to scaled space
          sol.y = sc.c * sc.e.cwiseInverse().cwiseProduct(yp);
          sol.polished = true;
          break;
        }
      }
    }

    // infeasibility certificates
    const Eigen::VectorXd dy = sol.y - y_prev_check;
    const double dy_norm = inf_norm(unscale_y(dy));
    if (m > 0 && dy_norm > settings.eps_infeasible) {
      const Eigen::VectorXd dyu = unscale_y(dy);
      double support = 0.0;
      bool unbounded_support = false;
      for (int i = 0; i < m; ++i) {
        if (dyu[i] > settings.eps_infeasible * dy_norm) {
          if (!std::isfinite(problem.upper[i])) unbounded_support = true;
          else support += problem.upper[i] * dyu[i];
        } else if (dyu[i] < -settings.eps_infeasible * dy_norm) {
          if (!std::isfinite(problem.lower[i])) unbounded_support = true;
          else support += problem.lower[i] * dyu[i];
        }
      }
      if (!unbounded_support &&
          inf_norm(problem.A.transpose() * dyu) <= settings.eps_infeasible * dy_norm * 100 &&
          support < -settings.eps_infeasible * dy_norm) {
        sol.status = QpStatus::PrimalInfeasible;
        break;
      }
    }
    const Eigen::VectorXd dx = sol.x - x_prev_check;
    const double dx_norm = inf_norm(unscale_x(dx));
    if (dx_norm > settings.eps_infeasible) {
      const Eigen::VectorXd dxu = unscale_x(dx);
      const double tol = settings.eps_infeasible * dx_norm * 100;
      bool cert = inf_norm(problem.P * dxu) <= tol && problem.q.dot(dxu) < -tol;
      if (cert) {
        const Eigen::VectorXd adx = problem.A * dxu;
        for (int i = 0; i < m && cert; ++i) {
          if (std::isfinite(problem.upper[i]) && adx[i] > tol) cert = false;
          if (std::isfinite(problem.lower[i]) && adx[i] < -tol) cert = false;
        }
        if (cert) {
          sol.status = QpStatus::DualInfeasible;
          break;
        }
      }
    }
    x_prev_check = sol.x;
    y_prev_check = sol.y;

    // adaptive rho
    if (settings.adaptive_rho && m > 0 && pri_res > 0 && dua_res > 0) {
      const double scale_p = std::max(inf_norm(axu), inf_norm(zu)) + 1e-12;
      const double scale_d = std::max({inf_norm(problem.P * xu), inf_norm(problem.q),
                                       inf_norm(problem.A.transpose() * yu)}) +
                             1e-12;
      const double ratio = std::sqrt((pri_res / scale_p) / (dua_res / scale_d));
      if (ratio > 5.0 || ratio < 0.2) {
        rho_bar = std::clamp(rho_bar * ratio, kRhoMin, kRhoMax);
        fill_rho(rho_bar);
        kkt.factor(P, A, settings.sigma, rho);
      }
    }
  }
  sol.iterations = std::min(it, settings.max_iters);
  sol.final_rho = rho_bar;

  // unscale
  sol.x = unscale_x(sol.x);
  sol.y = unscale_y(sol.y);

  if (sol.status == QpStatus::Solved || sol.status == QpStatus::MaxIterations) {
    if (settings.polish && sol.status == QpStatus::Solved) sol.polished = polish_solution(problem, sol.x, sol.y);
    const KktResiduals r = kkt_residuals(problem, sol.x, sol.y);
    sol.primal_residual = r.primal;
    sol.dual_residual = r.stationarity;
  }
  sol.objective = 0.5 * sol.x.dot(problem.P * sol.x) + problem.q.dot(sol.x);
  return sol;
}

QpSolution solve_qp_dense(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                          const Eigen::MatrixXd& A_ineq, const Eigen::VectorXd& b_ineq,
                          const Eigen::MatrixXd& A_eq, const Eigen::VectorXd& b_eq, double tol) {
  const int n = static_cast<int>(H.rows());
  const int mi = static_cast<int>(A_ineq.rows());
  const int me = static_cast<int>(A_eq.rows());

  QpProblem prob;
  Eigen::MatrixXd Hs = 0.5 * (H + H.transpose());
  Hs.diagonal().array() += 1e-8;
  prob.P = Hs.sparseView();
  prob.q = g;
  Eigen::MatrixXd A(mi + me, n);
  if (mi > 0) A.topRows(mi) = A_ineq;
  if (me > 0) A.bottomRows(me) = A_eq;
  prob.A = A.sparseView();
  prob.lower.resize(mi + me);
  prob.upper.resize(mi + me);
  prob.lower.head(mi).setConstant(-kInf);
  if (mi > 0) prob.upper.head(mi) = b_ineq;
  if (me > 0) {
    prob.lower.tail(me) = b_eq;
    prob.upper.tail(me) = b_eq;
  }

  QpSettings settings;
  settings.eps_abs = tol;
  return solve_qp(prob, settings);
}

}  // namespace bimanip
