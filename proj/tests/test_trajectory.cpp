#include "uavsec/trajectory.hpp"

#include <gtest/gtest.h>

using namespace uavsec;

namespace {

// beams off over the horizon
std::vector<IsoTraces> zero_traces(int n_p, int k_users) {
  std::vector<IsoTraces> tr(static_cast<size_t>(n_p) + 1);
  for (auto& t : tr) {
    t.tr_w = VecX::Zero(k_users);
    t.tr_m = 0.0;
  }
  return tr;
}

std::vector<IsoTraces> uniform_traces(int n_p, int k_users, double per_user, double an) {
  std::vector<IsoTraces> tr(static_cast<size_t>(n_p) + 1);
  for (auto& t : tr) {
    t.tr_w = VecX::Constant(k_users, per_user);
    t.tr_m = an;
  }
  return tr;
}

TrajectoryAnchor straight_anchor(const Vec3& q0, const Vec3& q_b, double speed, int n_p,
                                 double t_c) {
  TrajectoryAnchor a;
  Vec3 dir = q_b - q0;
  if (dir.norm() > 1e-9) dir.normalize();
  a.v.assign(static_cast<size_t>(n_p) + 1, speed * dir);
  a.q.resize(static_cast<size_t>(n_p) + 1);
  a.q[0] = q0;
  for (int j = 1; j <= n_p; ++j) a.q[static_cast<size_t>(j)] = q0 + j * t_c * speed * dir;
  return a;
}

double dynamics_residual(const TrajectorySolution& sol, const Vec3& q0, double t_c) {
  double worst = (sol.q[1] - q0 - t_c * sol.v[0]).norm();
  for (size_t j = 1; j + 1 < sol.q.size(); ++j)
    worst = std::max(worst, (sol.q[j + 1] - sol.q[j] - t_c * sol.v[j]).norm());
  return worst;
}

}  // namespace

TEST(Trajectory, HoldsHorizontalPositionAtDestination) {
  Scenario sc = Scenario::preset_speed();
  sc.validate();
  TrajectoryInputs in;
  in.q0 = sc.q_b;
  in.v_prev = Vec3::Zero();
  in.traces = zero_traces(sc.mpc.n_p, sc.k_users());
  const auto anchor = straight_anchor(in.q0, sc.q_b, 0.0, sc.mpc.n_p, sc.limits.t_c);
  const auto sol = solve_trajectory(anchor, in, sc);
  ASSERT_FALSE(sol.kept_anchor);
  for (size_t j = 1; j < sol.q.size(); ++j) {
    EXPECT_LE((horizontal(sol.q[j]) - horizontal(sc.q_b)).norm(), 1.0);
    EXPECT_GE(sol.q[j].z(), sc.limits.z_min - 1e-6);
    EXPECT_LE(sol.q[j].z(), sc.limits.z_max + 1e-6);
  }
}

TEST(Trajectory, DrivesStraightTowardDestination) {
  Scenario sc = Scenario::preset_speed();
  sc.validate();
  TrajectoryInputs in;
  in.q0 = sc.q_a;
  in.v_prev = Vec3::Zero();
  in.traces = zero_traces(sc.mpc.n_p, sc.k_users());
  const auto anchor = straight_anchor(in.q0, sc.q_b, 40.0, sc.mpc.n_p, sc.limits.t_c);
  const auto res = sca_trajectory_loop(anchor, in, sc, 12, 1e-6);
  ASSERT_FALSE(res.plan.kept_anchor);
  // cross-track stays on the segment (y = 0, z = 600)
  double dist_prev = (in.q0 - sc.q_b).norm();
  for (size_t j = 1; j < res.plan.q.size(); ++j) {
    EXPECT_LE(std::abs(res.plan.q[j].y()), 1.0);
    EXPECT_LE(std::abs(res.plan.q[j].z() - 600.0), 1.0);
    const double d = (res.plan.q[j] - sc.q_b).norm();
    EXPECT_LT(d, dist_prev);
    dist_prev = d;
  }
  EXPECT_LE(dynamics_residual(res.plan, in.q0, sc.limits.t_c), 1e-6);
}

TEST(Trajectory, RespectsKinematicCapsAndBudget) {
  Scenario sc = Scenario::defaults();
  sc.validate();
  TrajectoryInputs in;
  in.q0 = sc.q_a;
  in.v_prev = Vec3::Zero();
  in.traces = uniform_traces(sc.mpc.n_p, sc.k_users(), 40.0, 15.0);
  const auto anchor = straight_anchor(in.q0, sc.q_b, 20.0, sc.mpc.n_p, sc.limits.t_c);
  const auto sol = solve_trajectory(anchor, in, sc);
  ASSERT_TRUE(sol.status == conic::SolveStatus::optimal ||
              sol.status == conic::SolveStatus::near_optimal);
  const double fixed = sc.k_users() * 40.0 + 15.0;
  Vec3 prev_v = in.v_prev;
  for (size_t j = 0; j < sol.v.size(); ++j) {
    EXPECT_LE(horizontal(sol.v[j]).norm(), sc.limits.v_max + 1e-6);
    EXPECT_LE(std::abs(sol.v[j].z()), sc.limits.u_max + 1e-6);
    EXPECT_LE((sol.v[j] - prev_v).norm(), sc.limits.a_max * sc.limits.t_c + 1e-6);
    prev_v = sol.v[j];
    Vec3 anchor_v = sol.v[j];
    anchor_v.head<2>() = floored_anchor_speed(horizontal(sol.v[j]), sc.q_b - in.q0);
    EXPECT_LE(power_upper_bound(sol.v[j], anchor_v, sc.airframe) + fixed,
              sc.budgets.p_max + 1e-4);
  }
  EXPECT_LE(dynamics_residual(sol, in.q0, sc.limits.t_c), 1e-6);
}

TEST(Trajectory, SurrogateObjectiveNotWorseThanAnchor) {
  Scenario sc = Scenario::defaults();
  sc.users = {NodeSite{{2300.0, 250.0, 0.0}, NodeRole::user}};
  sc.noise.sigma2_users = VecX::Constant(1, 1e-11);
  sc.mpc.n_p = 2;
  sc.validate();
  TrajectoryInputs in;
  in.q0 = Vec3(1500.0, 0.0, 620.0);
  in.v_prev = Vec3(25.0, 0.0, 0.0);
  in.traces = uniform_traces(sc.mpc.n_p, 1, 60.0, 20.0);
  const auto anchor = straight_anchor(in.q0, sc.q_b, 25.0, sc.mpc.n_p, sc.limits.t_c);
  const double anchor_obj =
      trajectory_surrogate_objective(anchor, in, sc, anchor.q, anchor.v);
  const auto sol = solve_trajectory(anchor, in, sc);
  EXPECT_LE(sol.surrogate_objective, anchor_obj + 1e-6 * (1.0 + std::abs(anchor_obj)));
}

TEST(Trajectory, ScaLoopConvergesMonotonically) {
  Scenario sc = Scenario::defaults();
  sc.validate();
  TrajectoryInputs in;
  in.q0 = Vec3(1200.0, 100.0, 640.0);
  in.v_prev = Vec3(25.0, 0.0, 0.0);
  in.traces = uniform_traces(sc.mpc.n_p, sc.k_users(), 50.0, 20.0);
  const auto anchor = straight_anchor(in.q0, sc.q_b, 25.0, sc.mpc.n_p, sc.limits.t_c);
  const auto res = sca_trajectory_loop(anchor, in, sc, 10, 1e-4);
  EXPECT_TRUE(res.converged);
  EXPECT_LE(res.iterations, 10);
  for (size_t i = 1; i < res.objective_history.size(); ++i)
    EXPECT_LE(res.objective_history[i],
              res.objective_history[i - 1] +
                  1e-9 * std::max(1.0, std::abs(res.objective_history[i - 1])));
}

TEST(Trajectory, ConvergedPlanMeetsExactIsotropicRates) {
  // Traces must sit inside the isotropic model's feasible envelope: the
  // position-only rates charge the full AN trace to every user, so the
  // per-user beam trace has to stay close to the AN trace while the
  // eavesdropper term stays noise-dominated.
  Scenario sc = Scenario::defaults();
  sc.solver.tol_rel = 1e-10;
  sc.budgets.r_min = 0.6;
  sc.budgets.r_max = 0.8;
  sc.eavesdropper.position = Vec3(2500.0, 2500.0, 0.0);  // off-track, noise-dominated
  sc.users = {NodeSite{{2300.0, 250.0, 0.0}, NodeRole::user},
              NodeSite{{2500.0, -200.0, 0.0}, NodeRole::user}};
  sc.validate();
  TrajectoryInputs in;
  in.q0 = Vec3(2400.0, 0.0, 560.0);
  in.v_prev = Vec3(5.0, 0.0, 0.0);
  in.traces = uniform_traces(sc.mpc.n_p, sc.k_users(), 0.25, 0.12);
  const auto anchor = straight_anchor(in.q0, sc.q_b, 5.0, sc.mpc.n_p, sc.limits.t_c);
  const auto res = sca_trajectory_loop(anchor, in, sc, 30, 1e-9);
  ASSERT_TRUE(res.converged);
  ASSERT_FALSE(res.plan.used_slack);
  for (size_t j = 1; j < res.plan.q.size(); ++j) {
    const auto& tr = in.traces[j];
    for (int k = 0; k < sc.k_users(); ++k) {
      const auto iso_u = iso_user_rate(res.plan.q[j], k, tr, sc.users, sc.propagation,
                                       sc.noise.sigma2_users[k]);
      const auto iso_e = iso_eaves_rate(res.plan.q[j], tr.tr_w[k], tr.tr_m, sc.eavesdropper,
                                        sc.propagation, sc.noise.sigma2_eve);
      EXPECT_GE(iso_u.total(), sc.budgets.r_min - 1e-5);
      EXPECT_LE(iso_e.total(), sc.budgets.r_max + 1e-5);
    }
  }
}

TEST(Trajectory, ReanchoringAtConvergenceIsIdempotent) {
  Scenario sc = Scenario::defaults();
  sc.solver.tol_rel = 1e-11;
  sc.budgets.r_min = 0.6;
  sc.budgets.r_max = 0.8;
  sc.eavesdropper.position = Vec3(2500.0, 2500.0, 0.0);
  sc.users = {NodeSite{{2300.0, 250.0, 0.0}, NodeRole::user},
              NodeSite{{2500.0, -200.0, 0.0}, NodeRole::user}};
  sc.validate();
  TrajectoryInputs in;
  in.q0 = Vec3(2400.0, 0.0, 560.0);
  in.v_prev = Vec3(5.0, 0.0, 0.0);
  in.traces = uniform_traces(sc.mpc.n_p, sc.k_users(), 0.25, 0.12);
  const auto anchor0 = straight_anchor(in.q0, sc.q_b, 5.0, sc.mpc.n_p, sc.limits.t_c);
  const auto res = sca_trajectory_loop(anchor0, in, sc, 40, 1e-10);
  ASSERT_TRUE(res.converged);
  TrajectoryAnchor fixed;
  fixed.q = res.plan.q;
  fixed.v = res.plan.v;
  const auto again = solve_trajectory(fixed, in, sc);
  for (size_t j = 1; j < again.q.size(); ++j)
    EXPECT_LE((again.q[j] - res.plan.q[j]).norm(), 1e-6)
        << "slot " << j << " moved on re-anchoring";
}

TEST(Trajectory, InfeasibleAnchorEngagesSlackRestoration) {
  Scenario sc = Scenario::defaults();
  sc.budgets.r_min = 12.0;  // far above what the geometry can deliver
  sc.validate();
  TrajectoryInputs in;
  in.q0 = Vec3(200.0, 0.0, 850.0);
  in.v_prev = Vec3(25.0, 0.0, 0.0);
  in.traces = uniform_traces(sc.mpc.n_p, sc.k_users(), 1e-3, 1e-3);
  const auto anchor = straight_anchor(in.q0, sc.q_b, 25.0, sc.mpc.n_p, sc.limits.t_c);
  const auto sol = solve_trajectory(anchor, in, sc);
  EXPECT_TRUE(sol.used_slack);
  EXPECT_TRUE(sol.status == conic::SolveStatus::optimal ||
              sol.status == conic::SolveStatus::near_optimal);
}
