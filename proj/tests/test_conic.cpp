#include "uavsec/conic.hpp"

#include <gtest/gtest.h>

#include <random>
#include <sstream>

using namespace uavsec;
using namespace uavsec::conic;

TEST(PackConvention, RoundTripAndTraceForm) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g(0.0, 1.0);
  ConicProblem p;
  const MatVar m = p.add_hermitian(4);
  for (int trial = 0; trial < 20; ++trial) {
    MatC a(4, 4), x(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        a(i, j) = Cplx(g(rng), g(rng));
        x(i, j) = Cplx(g(rng), g(rng));
      }
    a = (0.5 * (a + a.adjoint())).eval();
    x = (0.5 * (x + x.adjoint())).eval();
    VecX v = VecX::Zero(p.num_vars());
    m.pack_into(x, v);
    EXPECT_LE((m.unpack(v) - x).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(ConicProblem::trace_form(m, a).eval(v), re_trace(a, x), 1e-10);
  }
}

TEST(BarrierSolver, LpCorner) {
  ConicProblem p;
  const int x = p.add_scalars(1);
  p.add_objective(Term::affine(LinForm::single(x, 1.0)));
  p.add_linear_inequality(LinForm::single(x, -1.0), -3.0, "x >= 3");
  p.add_linear_inequality(LinForm::single(x, 1.0), 100.0, "x <= 100");
  SolverOptions opts;
  opts.tol_rel = 1e-9;
  const auto res = p.solve(VecX::Constant(1, 5.0), opts);
  ASSERT_TRUE(res.ok());
  EXPECT_NEAR(res.x[0], 3.0, 1e-6);
  EXPECT_NEAR(res.objective, p.eval_objective(res.x), 1e-12);
}

TEST(BarrierSolver, LpCornerFromInfeasibleStart) {
  ConicProblem p;
  const int x = p.add_scalars(1);
  p.add_objective(Term::affine(LinForm::single(x, 1.0)));
  p.add_linear_inequality(LinForm::single(x, -1.0), -3.0);
  p.add_linear_inequality(LinForm::single(x, 1.0), 100.0);
  SolverOptions opts;
  opts.tol_rel = 1e-9;
  const auto res = p.solve(VecX::Zero(1), opts);  // start violates x >= 3
  ASSERT_TRUE(res.ok());
  EXPECT_NEAR(res.x[0], 3.0, 1e-6);
}

TEST(BarrierSolver, DetectsInfeasible) {
  ConicProblem p;
  const int x = p.add_scalars(1);
  p.add_objective(Term::affine(LinForm::single(x, 1.0)));
  p.add_linear_inequality(LinForm::single(x, -1.0), -3.0);  // x >= 3
  p.add_linear_inequality(LinForm::single(x, 1.0), 2.0);    // x <= 2
  const auto res = p.solve(VecX::Zero(1));
  EXPECT_EQ(res.status, SolveStatus::infeasible);
}

TEST(BarrierSolver, TrustRegionProjection) {
  // min ||x - (2,0)||^2 s.t. ||x|| <= 1  ->  x* = (1,0), f* = 1.
  ConicProblem p;
  const int x = p.add_scalars(2);
  p.add_objective(Term::quadratic({x, x + 1}, (VecX(2) << 2.0, 0.0).finished(), 1.0));
  Soc ball;
  ball.idx = {x, x + 1};
  ball.f_rows = MatX::Identity(2, 2);
  ball.f0 = VecX::Zero(2);
  ball.u = LinForm::constant(1.0);
  p.add_soc(std::move(ball));
  SolverOptions opts;
  opts.tol_rel = 1e-9;
  const auto res = p.solve((VecX(2) << 0.1, 0.1).finished(), opts);
  ASSERT_TRUE(res.ok());
  EXPECT_NEAR(res.x[0], 1.0, 1e-6);
  EXPECT_NEAR(res.x[1], 0.0, 1e-6);
  EXPECT_NEAR(res.objective, 1.0, 1e-5);
}

TEST(BarrierSolver, SocWithAffineRadius) {
  // min u s.t. ||(1,2)|| <= u  ->  u* = sqrt(5).
  ConicProblem p;
  const int u = p.add_scalars(1);
  p.add_objective(Term::affine(LinForm::single(u, 1.0)));
  Soc cone;
  cone.idx = {};
  cone.f_rows = MatX::Zero(2, 0);
  cone.f0 = (VecX(2) << 1.0, 2.0).finished();
  cone.u = LinForm::single(u, 1.0);
  p.add_soc(std::move(cone));
  SolverOptions opts;
  opts.tol_rel = 1e-9;
  const auto res = p.solve(VecX::Constant(1, 10.0), opts);
  ASSERT_TRUE(res.ok());
  EXPECT_NEAR(res.x[0], std::sqrt(5.0), 1e-5);
}

TEST(BarrierSolver, SdpIdentityForced) {
  // min Tr X s.t. X >= I (2x2 Hermitian)  ->  X = I, Tr = 2.
  ConicProblem p;
  const MatVar m = p.add_hermitian(2);
  p.add_objective(Term::affine(ConicProblem::trace_of(m)));
  p.require_psd_shifted(m, MatC::Identity(2, 2));
  VecX x0 = VecX::Zero(p.num_vars());
  m.pack_into(3.0 * MatC::Identity(2, 2), x0);
  SolverOptions opts;
  opts.tol_rel = 1e-9;
  const auto res = p.solve(x0, opts);
  ASSERT_TRUE(res.ok());
  EXPECT_NEAR(res.objective, 2.0, 1e-5);
  const MatC xm = m.unpack(res.x);
  EXPECT_LE((xm - MatC::Identity(2, 2)).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(BarrierSolver, MinEigenvalueSdpMatchesEigenOracle) {
  // min <C, X> s.t. Tr X = 1, X >= 0  ->  lambda_min(C).
  std::mt19937_64 rng(7);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    MatC c(3, 3);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) c(i, j) = Cplx(g(rng), g(rng));
    c = (0.5 * (c + c.adjoint())).eval();

    ConicProblem p;
    const MatVar m = p.add_hermitian(3);
    p.add_objective(Term::affine(ConicProblem::trace_form(m, c)));
    p.require_psd(m);
    p.add_equality(ConicProblem::trace_of(m), 1.0);
    VecX x0 = VecX::Zero(p.num_vars());
    m.pack_into(MatC::Identity(3, 3) / 3.0, x0);
    SolverOptions opts;
    opts.tol_rel = 1e-9;
    const auto res = p.solve(x0, opts);
    ASSERT_TRUE(res.ok());
    const VecX ev = hermitian_eigenvalues(c);
    EXPECT_NEAR(res.objective, ev[2], 2e-5 * (1.0 + std::abs(ev[2])));
    // PSD floor at the returned assignment.
    const VecX xev = hermitian_eigenvalues(m.unpack(res.x));
    EXPECT_GE(xev.minCoeff(), -1e-8);
    EXPECT_NEAR(m.unpack(res.x).trace().real(), 1.0, 1e-8);
  }
}

TEST(BarrierSolver, LogKnapsack) {
  // max log2 x1 + log2 x2 s.t. x1+x2 <= 4, x >= 0.01  ->  x = (2,2).
  ConicProblem p;
  const int x = p.add_scalars(2);
  p.add_objective(Term::log_affine(LinForm::single(x, 1.0), -1.0));
  p.add_objective(Term::log_affine(LinForm::single(x + 1, 1.0), -1.0));
  LinForm sum;
  sum.push(x, 1.0).push(x + 1, 1.0);
  p.add_linear_inequality(sum, 4.0);
  p.add_linear_inequality(LinForm::single(x, -1.0), -0.01);
  p.add_linear_inequality(LinForm::single(x + 1, -1.0), -0.01);
  SolverOptions opts;
  opts.tol_rel = 1e-10;
  const auto res = p.solve((VecX(2) << 0.5, 1.0).finished(), opts);
  ASSERT_TRUE(res.ok());
  EXPECT_NEAR(res.x[0], 2.0, 1e-4);
  EXPECT_NEAR(res.x[1], 2.0, 1e-4);
  EXPECT_NEAR(res.objective, -2.0, 1e-5);
}

TEST(BarrierSolver, InvSqrtInteriorOptimum) {
  // min x^{-1/2} + x/8 over (0, 100]  ->  x* = 4^{2/3}.
  ConicProblem p;
  const int x = p.add_scalars(1);
  p.add_objective(Term::inv_sqrt_affine(LinForm::single(x, 1.0), 1.0));
  p.add_objective(Term::affine(LinForm::single(x, 0.125)));
  p.add_linear_inequality(LinForm::single(x, 1.0), 100.0);
  SolverOptions opts;
  opts.tol_rel = 1e-10;
  const auto res = p.solve(VecX::Constant(1, 1.0), opts);
  ASSERT_TRUE(res.ok());
  EXPECT_NEAR(res.x[0], std::pow(4.0, 2.0 / 3.0), 1e-6);
}

TEST(BarrierSolver, NormCubePenaltyPullsTowardZero) {
  // min ||u||^3 - u1 over |u| <= 10: d/du (r^3) = 3 r u; at optimum
  // 3*u1^2 = 1 with u2 = 0  ->  u1 = 1/sqrt(3).
  ConicProblem p;
  const int u = p.add_scalars(2);
  p.add_objective(Term::norm_cube({u, u + 1}, 1.0));
  p.add_objective(Term::affine(LinForm::single(u, -1.0)));
  p.add_linear_inequality(LinForm::single(u, 1.0), 10.0);
  p.add_linear_inequality(LinForm::single(u, -1.0), 10.0);
  p.add_linear_inequality(LinForm::single(u + 1, 1.0), 10.0);
  p.add_linear_inequality(LinForm::single(u + 1, -1.0), 10.0);
  SolverOptions opts;
  opts.tol_rel = 1e-10;
  const auto res = p.solve((VecX(2) << 0.5, 0.3).finished(), opts);
  ASSERT_TRUE(res.ok());
  EXPECT_NEAR(res.x[0], 1.0 / std::sqrt(3.0), 1e-5);
  EXPECT_NEAR(res.x[1], 0.0, 1e-6);
}

TEST(BarrierSolver, EqualityConstrainedQuadratic) {
  // min ||x||^2 s.t. x1 + x2 = 2  ->  (1,1).
  ConicProblem p;
  const int x = p.add_scalars(2);
  p.add_objective(Term::quadratic({x, x + 1}, VecX::Zero(2), 1.0));
  LinForm eq;
  eq.push(x, 1.0).push(x + 1, 1.0);
  p.add_equality(eq, 2.0);
  p.add_linear_inequality(LinForm::single(x, 1.0), 50.0);
  const auto res = p.solve((VecX(2) << 4.0, -2.0).finished());
  ASSERT_TRUE(res.ok());
  EXPECT_NEAR(res.x[0], 1.0, 1e-6);
  EXPECT_NEAR(res.x[1], 1.0, 1e-6);
  EXPECT_LE(res.eq_residual, 1e-9);
}

TEST(BarrierSolver, DeterministicAcrossRepeats) {
  ConicProblem p;
  const int x = p.add_scalars(2);
  p.add_objective(Term::quadratic({x, x + 1}, (VecX(2) << 2.0, 1.0).finished(), 1.0));
  Soc ball;
  ball.idx = {x, x + 1};
  ball.f_rows = MatX::Identity(2, 2);
  ball.f0 = VecX::Zero(2);
  ball.u = LinForm::constant(1.5);
  p.add_soc(std::move(ball));
  const auto r1 = p.solve((VecX(2) << 0.2, 0.1).finished());
  const auto r2 = p.solve((VecX(2) << 0.2, 0.1).finished());
  ASSERT_TRUE(r1.ok());
  ASSERT_TRUE(r2.ok());
  EXPECT_EQ(std::memcmp(r1.x.data(), r2.x.data(), sizeof(double) * 2), 0);
}

TEST(BarrierSolver, DumpIsSelfDescribing) {
  ConicProblem p;
  const MatVar m = p.add_hermitian(2);
  p.require_psd(m);
  p.add_objective(Term::affine(ConicProblem::trace_of(m)));
  std::ostringstream os;
  p.dump(os);
  EXPECT_NE(os.str().find("\"psd_cones\": [2]"), std::string::npos);
  EXPECT_NE(os.str().find("\"vars\": 4"), std::string::npos);
}
