#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bimanip/qp.hpp"
#include "bimanip/random.hpp"

using namespace bimanip;

namespace {

/// Dense active-set enumeration oracle for tiny inequality-constrained QPs:
/// tries every subset of constraints as the active set, solves the
/// equality-KKT system and keeps the best KKT-consistent candidate.
struct OracleResult {
  bool found = false;
  Eigen::VectorXd x;
  double objective = 0.0;
};

OracleResult enumerate_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                          const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
  const int n = static_cast<int>(H.rows());
  const int m = static_cast<int>(A.rows());
  OracleResult best;
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    std::vector<int> act;
    for (int i = 0; i < m; ++i)
      if (mask & (1u << i)) act.push_back(i);
    const int k = static_cast<int>(act.size());
    if (k > n) continue;
    Eigen::MatrixXd kkt(n + k, n + k);
    kkt.setZero();
    kkt.topLeftCorner(n, n) = H;
    for (int j = 0; j < k; ++j) {
      kkt.block(n + j, 0, 1, n) = A.row(act[j]);
      kkt.block(0, n + j, n, 1) = A.row(act[j]).transpose();
    }
    Eigen::VectorXd rhs(n + k);
    rhs.head(n) = -g;
    for (int j = 0; j < k; ++j) rhs[n + j] = b[act[j]];
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(kkt);
    if (!lu.isInvertible()) continue;
    const Eigen::VectorXd sol = lu.solve(rhs);
    const Eigen::VectorXd x = sol.head(n);
    const Eigen::VectorXd lambda = sol.tail(k);
    if ((lambda.array() < -1e-9).any()) continue;
    if (((A * x - b).array() > 1e-9).any()) continue;
    const double obj = 0.5 * x.dot(H * x) + g.dot(x);
    if (!best.found || obj < best.objective) {
      best.found = true;
      best.x = x;
      best.objective = obj;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("analytic KKT: min x^2 s.t. x >= 1") {
  Eigen::MatrixXd H(1, 1), A(1, 1);
  H << 2.0;
  A << -1.0;  // -x <= -1
  Eigen::VectorXd g = Eigen::VectorXd::Zero(1), b(1);
  b << -1.0;
  const QpSolution sol = solve_qp_dense(H, g, A, b, {}, {}, 1e-8);
  REQUIRE(sol.solved());
  CHECK(sol.x[0] == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(sol.y[0] == doctest::Approx(2.0).epsilon(1e-4));
}

TEST_CASE("analytic projection: min (x-3)^2+(y-1)^2 s.t. x+y <= 2") {
  Eigen::MatrixXd H = 2.0 * Eigen::MatrixXd::Identity(2, 2);
  Eigen::VectorXd g(2);
  g << -6.0, -2.0;
  Eigen::MatrixXd A(1, 2);
  A << 1.0, 1.0;
  Eigen::VectorXd b(1);
  b << 2.0;
  const QpSolution sol = solve_qp_dense(H, g, A, b, {}, {}, 1e-8);
  REQUIRE(sol.solved());
  CHECK(sol.x[0] == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(sol.x[1] == doctest::Approx(0.0).epsilon(1e-6));
}

TEST_CASE("equality constraints") {
  Eigen::MatrixXd H = 2.0 * Eigen::MatrixXd::Identity(3, 3);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(3);
  Eigen::MatrixXd Aeq(1, 3);
  Aeq << 1.0, 1.0, 1.0;
  Eigen::VectorXd beq(1);
  beq << 3.0;
  const QpSolution sol = solve_qp_dense(H, g, {}, {}, Aeq, beq, 1e-8);
  REQUIRE(sol.solved());
  for (int i = 0; i < 3; ++i) CHECK(sol.x[i] == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("infeasible QP is detected") {
  // x >= 1 and x <= 0
  Eigen::MatrixXd H(1, 1);
  H << 2.0;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(1);
  Eigen::MatrixXd A(2, 1);
  A << -1.0, 1.0;
  Eigen::VectorXd b(2);
  b << -1.0, 0.0;
  const QpSolution sol = solve_qp_dense(H, g, A, b, {}, {}, 1e-8);
  CHECK(sol.status == QpStatus::PrimalInfeasible);
}

TEST_CASE("random strictly-convex QPs match the enumeration oracle") {
  Rng rng(101);
  int compared = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_index(6));
    const int m = 1 + static_cast<int>(rng.uniform_index(10));
    Eigen::MatrixXd M(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) M(i, j) = rng.normal();
    const Eigen::MatrixXd H =
        M.transpose() * M + 0.5 * Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd g(n);
    for (int i = 0; i < n; ++i) g[i] = rng.normal();
    Eigen::MatrixXd A(m, n);
    Eigen::VectorXd b(m);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) A(i, j) = rng.normal();
      b[i] = rng.uniform(0.1, 2.0);  // x = 0 strictly feasible
    }
    const OracleResult oracle = enumerate_qp(H, g, A, b);
    REQUIRE(oracle.found);
    const QpSolution sol = solve_qp_dense(H, g, A, b, {}, {}, 1e-8);
    REQUIRE(sol.solved());
    CHECK(std::abs(sol.objective - oracle.objective) < 1e-6);
    ++compared;
  }
  CHECK(compared == 100);
}

TEST_CASE("KKT residuals below tolerance on larger random instances") {
  Rng rng(202);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 5 + static_cast<int>(rng.uniform_index(16));  // up to 20
    const int m = 5 + static_cast<int>(rng.uniform_index(36));  // up to 40
    Eigen::MatrixXd M(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) M(i, j) = rng.normal();
    const Eigen::MatrixXd H = M.transpose() * M + Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd g(n);
    for (int i = 0; i < n; ++i) g[i] = rng.normal();
    Eigen::MatrixXd A(m, n);
    Eigen::VectorXd b(m);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < n; ++j) A(i, j) = rng.normal();
      b[i] = rng.uniform(0.05, 3.0);
    }
    const QpSolution sol = solve_qp_dense(H, g, A, b, {}, {}, 1e-6);
    REQUIRE(sol.solved());

    QpProblem prob;
    Eigen::MatrixXd Hs = H;
    Hs.diagonal().array() += 1e-8;
    prob.P = Hs.sparseView();
    prob.q = g;
    prob.A = A.sparseView();
    prob.lower = Eigen::VectorXd::Constant(m, -std::numeric_limits<double>::infinity());
    prob.upper = b;
    const KktResiduals r = kkt_residuals(prob, sol.x, sol.y);
    CHECK(r.stationarity < 1e-6);
    CHECK(r.primal < 1e-6);
    CHECK(r.complementarity < 1e-6);
  }
}

TEST_CASE("warm start reuses previous solution") {
  Eigen::MatrixXd H = 2.0 * Eigen::MatrixXd::Identity(4, 4);
  Eigen::VectorXd g(4);
  g << -1.0, 2.0, -3.0, 0.5;
  Eigen::MatrixXd A(2, 4);
  A << 1, 1, 0, 0, 0, 0, 1, 1;
  Eigen::VectorXd b(2);
  b << 1.0, 0.5;

  QpProblem prob;
  prob.P = H.sparseView();
  prob.q = g;
  prob.A = A.sparseView();
  prob.lower = Eigen::VectorXd::Constant(2, -std::numeric_limits<double>::infinity());
  prob.upper = b;
  const QpSolution cold = solve_qp(prob);
  REQUIRE(cold.solved());
  const QpSolution warm = solve_qp(prob, {}, &cold.x, &cold.y);
  REQUIRE(warm.solved());
  CHECK((warm.x - cold.x).norm() < 1e-5);
  CHECK(warm.iterations <= cold.iterations);
}
