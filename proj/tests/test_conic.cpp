#include <cmath>
#include <random>

#include "doctest.h"
#include "ots/conic.hpp"

using namespace ots;

namespace {

ConicProgram soc_toy() {
  // min x  s.t.  x >= ||(1,2)||
  ConicProgram p;
  int x = p.add_variable("x");
  p.add_objective_term(x, 1.0);
  p.append_block(ConeKind::Soc, {{{{x, -1.0}}, 0.0}, {{}, 1.0}, {{}, 2.0}});
  return p;
}

}  // namespace

TEST_CASE("soc toy reaches sqrt(5)") {
  auto sol = solve(soc_toy());
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(std::abs(sol.x[0] - std::sqrt(5.0)) <= 1e-8);
  CHECK(sol.dual_objective <= sol.objective + 1e-7);
}

TEST_CASE("lp box") {
  ConicProgram p;
  int x = p.add_variable();
  int y = p.add_variable();
  p.add_objective_term(x, -1.0);
  p.add_objective_term(y, -1.0);
  p.add_box(x, 0.0, 1.0);
  p.add_box(y, 0.0, 2.0);
  auto sol = solve(p);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.objective == doctest::Approx(-3.0).epsilon(1e-8));
  CHECK(sol.x[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(sol.x[1] == doctest::Approx(2.0).epsilon(1e-7));
}

TEST_CASE("rotated cone epigraph") {
  // min t  s.t.  t*u >= x^2, u = 1, x = 3   ->  t = 9
  ConicProgram p;
  int t = p.add_variable();
  int x = p.add_variable();
  p.add_objective_term(t, 1.0);
  p.add_eq({{x, 1.0}}, 3.0);
  p.append_block(ConeKind::RSoc, {{{{t, -1.0}}, 0.0}, {{}, 1.0}, {{{x, -1.0}}, 0.0}});
  auto sol = solve(p);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.objective == doctest::Approx(9.0).epsilon(1e-7));
}

TEST_CASE("infeasible lp gives a farkas certificate") {
  ConicProgram p;
  int x = p.add_variable();
  p.add_ge({{x, 1.0}}, 1.0);
  p.add_le({{x, 1.0}}, 0.0);
  auto sol = solve(p);
  REQUIRE(sol.status == SolveStatus::Infeasible);
  // y in K*, A'y ~ 0, b'y = -1.
  auto A = p.matrix();
  auto b = p.rhs_vector();
  Eigen::VectorXd aty = A.transpose() * sol.y;
  CHECK(aty.cwiseAbs().maxCoeff() <= 1e-7);
  CHECK(b.dot(sol.y) == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(sol.y.minCoeff() >= -1e-9);  // both rows are nonnegative-cone rows
}

TEST_CASE("unbounded lp gives an improving ray") {
  ConicProgram p;
  int x = p.add_variable();
  p.add_objective_term(x, 1.0);
  p.add_le({{x, 1.0}}, 0.0);
  auto sol = solve(p);
  REQUIRE(sol.status == SolveStatus::Unbounded);
  CHECK(p.cost_vector().dot(sol.x) == doctest::Approx(-1.0).epsilon(1e-6));
}

TEST_CASE("psd schur complement") {
  // min W22 s.t. W11 = 1, W12 = 2, W psd  ->  W22 = 4
  ConicProgram p;
  int w11 = p.add_variable();
  int w12 = p.add_variable();
  int w22 = p.add_variable();
  p.add_objective_term(w22, 1.0);
  p.add_eq({{w11, 1.0}}, 1.0);
  p.add_eq({{w12, 1.0}}, 2.0);
  const double rt2 = std::sqrt(2.0);
  p.append_psd_block(
      2, {{{{w11, -1.0}}, 0.0}, {{{w12, -rt2}}, 0.0}, {{{w22, -1.0}}, 0.0}});
  auto sol = psd_outer_loop(p);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(std::abs(sol.x[2] - 4.0) <= 1e-6);
}

TEST_CASE("psd already implied converges in one round") {
  // Diagonal 2x2 with nonneg diagonal entries: minors make it psd at once.
  ConicProgram p;
  int a = p.add_variable();
  int b = p.add_variable();
  p.add_objective_term(a, 1.0);
  p.add_objective_term(b, 1.0);
  p.add_box(a, 0.5, 2.0);
  p.add_box(b, 0.5, 2.0);
  p.append_psd_block(2, {{{{a, -1.0}}, 0.0}, {{}, 0.0}, {{{b, -1.0}}, 0.0}});
  auto sol = psd_outer_loop(p);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.psd_rounds == 1);
  CHECK(sol.objective == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("random psd feasibility instances stay above -1e-7") {
  std::mt19937_64 rng(20240817);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const int d = 6;
    ConicProgram p;
    std::vector<int> vars;
    for (int i = 0; i < svec_size(d); ++i) vars.push_back(p.add_variable());
    // Random linear objective over svec(W), diagonal boxed, W psd.
    for (int i = 0; i < svec_size(d); ++i) p.add_objective_term(vars[i], u(rng));
    for (int i = 0; i < d; ++i) p.add_box(vars[svec_index(i, i)], 0.1, 1.0);
    for (int j = 1; j < d; ++j)
      for (int i = 0; i < j; ++i) p.add_box(vars[svec_index(i, j)], -2.0, 2.0);
    std::vector<ConeRow> rows;
    for (int i = 0; i < svec_size(d); ++i) rows.push_back({{{vars[i], -1.0}}, 0.0});
    p.append_psd_block(d, rows);
    auto sol = psd_outer_loop(p);
    REQUIRE(sol.status == SolveStatus::Optimal);
    Eigen::VectorXd svec(svec_size(d));
    for (int i = 0; i < svec_size(d); ++i) svec[i] = sol.x[vars[i]];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(svec_to_matrix(svec, d));
    CHECK(es.eigenvalues().minCoeff() >= -1e-7);
  }
}

TEST_CASE("weak duality on a mixed program") {
  ConicProgram p = soc_toy();
  int y = p.add_variable();
  p.add_objective_term(y, 0.5);
  p.add_ge({{y, 1.0}, {0, 1.0}}, 3.0);
  p.add_box(y, 0.0, 10.0);
  auto sol = solve(p);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.dual_objective <= sol.objective + 1e-7);
  CHECK(sol.objective - sol.dual_objective <= 1e-6);
}

TEST_CASE("determinism across repeated solves") {
  auto a = solve(soc_toy());
  auto b = solve(soc_toy());
  CHECK(a.iterations == b.iterations);
  CHECK((a.x - b.x).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("json round trip preserves solutions") {
  ConicProgram p = soc_toy();
  auto q = ConicProgram::from_json(p.to_json());
  auto sa = solve(p);
  auto sb = solve(q);
  REQUIRE(sa.status == SolveStatus::Optimal);
  REQUIRE(sb.status == SolveStatus::Optimal);
  CHECK(sa.objective == doctest::Approx(sb.objective).epsilon(1e-10));
}

TEST_CASE("presolve handles fully fixed programs") {
  ConicProgram p;
  int x = p.add_variable();
  int y = p.add_variable();
  p.add_objective_term(x, 2.0);
  p.add_objective_term(y, 1.0);
  p.add_eq({{x, 1.0}}, 3.0);
  p.add_eq({{x, 1.0}, {y, 1.0}}, 5.0);
  auto sol = solve(p);
  REQUIRE(sol.status == SolveStatus::Optimal);
  CHECK(sol.objective == doctest::Approx(8.0));
  CHECK(sol.x[1] == doctest::Approx(2.0));
  CHECK(sol.dual_objective == doctest::Approx(8.0).epsilon(1e-6));
}
