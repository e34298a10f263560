#pragma once

// Trajectory subproblem: optimize horizon positions/velocities with beam and
// AN traces held fixed. The propulsion power is replaced by its anchored
// convex upper bound, the subtracted user log and the leading eavesdropper
// log by their tangents at the anchor; the remaining path-loss logs stay
// exact, so the subproblem is smooth but not globally convex and is solved
// as a damped-Newton barrier problem warm-started at the anchor.

#include "uavsec/conic.hpp"
#include "uavsec/geometry.hpp"
#include "uavsec/rates.hpp"
#include "uavsec/scenario.hpp"

namespace uavsec {

// Per-slot anchor over the horizon: q[0] is the measured position, entries
// 1..n_p are planned. Velocities cover 0..n_p.
struct TrajectoryAnchor {
  std::vector<Vec3> q;
  std::vector<Vec3> v;

  int horizon() const { return static_cast<int>(v.size()) - 1; }
};

struct TrajectorySolution {
  std::vector<Vec3> q;  // 0..n_p, q[0] fixed
  std::vector<Vec3> v;  // 0..n_p
  double surrogate_objective = 0.0;
  bool used_slack = false;
  bool kept_anchor = false;  // solver failed or did not improve; anchor returned
  conic::SolveStatus status = conic::SolveStatus::optimal;
};

struct TrajectoryInputs {
  Vec3 q0;       // measured position (fixed)
  Vec3 v_prev;   // previously applied velocity (acceleration link)
  std::vector<IsoTraces> traces;  // per horizon slot 0..n_p
  double altitude_margin = 0.0;   // band tightening under disturbance
};

namespace traj_detail {

struct Layout {
  int n_p;
  int v0(int j) const { return 3 * j; }              // velocity slot j
  int q0(int j) const { return 3 * (n_p + 1) + 3 * (j - 1); }  // position slot j >= 1
  int total() const { return 3 * (n_p + 1) + 3 * n_p; }
};

// Affine surrogate argument of the induced-power bound at anchor velocity.
inline conic::LinForm power_bound_form(const Layout& lay, int j, const Vec2& anchor_h,
                                       double hover_speed) {
  const double an2 = anchor_h.squaredNorm();
  const double vh4 = std::pow(hover_speed, 4);
  const double g = 1.0 / std::sqrt(an2 * an2 + 4.0 * vh4);
  conic::LinForm f;
  f.c0 = g * (4.0 * vh4 - an2) - an2;
  f.push(lay.v0(j), (2.0 * g + 2.0) * anchor_h.x());
  f.push(lay.v0(j) + 1, (2.0 * g + 2.0) * anchor_h.y());
  return f;
}

inline void add_power_terms(conic::ConicProblem& p, const Layout& lay, int j,
                            const Vec2& anchor_h, const AirframeParams& air, double weight,
                            std::vector<conic::Term>* constraint_terms) {
  const double a_ind = air.weight * air.weight / (std::sqrt(2.0) * air.rho * air.disc_area);
  const double c_prof = air.zeta * air.rho * air.disc_area / 8.0;
  const auto arg = power_bound_form(lay, j, anchor_h, air.hover_speed);
  auto t_ind = conic::Term::inv_sqrt_affine(arg, weight * a_ind);
  auto t_climb = conic::Term::affine(conic::LinForm::single(lay.v0(j) + 2, weight * air.weight));
  auto t_prof = conic::Term::norm_cube({lay.v0(j), lay.v0(j) + 1}, weight * c_prof);
  if (constraint_terms) {
    constraint_terms->push_back(t_ind);
    constraint_terms->push_back(t_climb);
    constraint_terms->push_back(t_prof);
  } else {
    p.add_objective(std::move(t_ind));
    p.add_objective(std::move(t_climb));
    p.add_objective(std::move(t_prof));
  }
}

inline conic::LinForm affine_of_position(const Layout& lay, int j, const AffineOfPosition& a,
                                         double scale) {
  conic::LinForm f;
  f.c0 = scale * (a.value - a.grad.dot(a.anchor));
  for (int c = 0; c < 3; ++c) f.push(lay.q0(j) + c, scale * a.grad[c]);
  return f;
}

}  // namespace traj_detail

// Surrogate objective of a candidate plan under the given anchor; used for
// the accept/reject safeguard and reported to the SCA loop.
inline double trajectory_surrogate_objective(const TrajectoryAnchor& anchor,
                                             const TrajectoryInputs& in, const Scenario& sc,
                                             const std::vector<Vec3>& q,
                                             const std::vector<Vec3>& v) {
  const int n_p = anchor.horizon();
  const auto& w = sc.weights;
  double total = w.w1 * (in.q0 - sc.q_b).squaredNorm();
  for (int j = 1; j <= n_p; ++j)
    total += w.w1 * (q[static_cast<size_t>(j)] - sc.q_b).squaredNorm();
  for (int j = 0; j <= n_p; ++j) {
    const Vec2 ah = floored_anchor_speed(horizontal(anchor.v[static_cast<size_t>(j)]),
                                         sc.q_b - in.q0);
    Vec3 va = v[static_cast<size_t>(j)];
    Vec3 anchor_v = anchor.v[static_cast<size_t>(j)];
    anchor_v.head<2>() = ah;
    total += w.w2 * power_upper_bound(va, anchor_v, sc.airframe);
  }
  for (int j = 0; j <= n_p; ++j) {
    const Vec3 pos = (j == 0) ? in.q0 : q[static_cast<size_t>(j)];
    const Vec3 anchor_pos = (j == 0) ? in.q0 : anchor.q[static_cast<size_t>(j)];
    const auto& tr = in.traces[static_cast<size_t>(j)];
    for (int k = 0; k < sc.k_users(); ++k) {
      const auto surr = linearize_position_surrogates(
          anchor_pos, k, tr, sc.users, sc.eavesdropper, sc.propagation,
          sc.noise.sigma2_users[k], sc.noise.sigma2_eve, sc.iso_interference_own_distance);
      total -= w.w3 * surr.rs_new(pos);
    }
  }
  return total;
}

inline TrajectorySolution solve_trajectory(const TrajectoryAnchor& anchor,
                                           const TrajectoryInputs& in, const Scenario& sc) {
  const int n_p = anchor.horizon();
  const traj_detail::Layout lay{n_p};
  conic::ConicProblem prob;
  prob.add_scalars(lay.total());
  const auto& lim = sc.limits;
  const auto& w = sc.weights;

  // dynamics: q_{j+1} = q_j + t_c v_j
  for (int j = 0; j < n_p; ++j)
    for (int c = 0; c < 3; ++c) {
      conic::LinForm f;
      f.push(lay.q0(j + 1) + c, 1.0);
      if (j >= 1) f.push(lay.q0(j) + c, -1.0);
      f.push(lay.v0(j) + c, -lim.t_c);
      prob.add_equality(f, j == 0 ? in.q0[c] : 0.0);
    }

  // altitude band (tightened under disturbance)
  const double z_lo = lim.z_min + in.altitude_margin;
  const double z_hi = lim.z_max - in.altitude_margin;
  for (int j = 1; j <= n_p; ++j) {
    prob.add_linear_inequality(conic::LinForm::single(lay.q0(j) + 2, -1.0), -z_lo, "z floor");
    prob.add_linear_inequality(conic::LinForm::single(lay.q0(j) + 2, 1.0), z_hi, "z ceil");
  }
  // the final velocity must stay executable: its phantom next position also
  // sits inside the band, otherwise a terminal dive mines climb-power credit
  {
    conic::LinForm dn, up;
    double base = 0.0;  // constant part of the phantom altitude
    if (n_p >= 1) {
      dn.push(lay.q0(n_p) + 2, -1.0);
      up.push(lay.q0(n_p) + 2, 1.0);
    } else {
      base = in.q0.z();
    }
    dn.push(lay.v0(n_p) + 2, -lim.t_c);
    up.push(lay.v0(n_p) + 2, lim.t_c);
    prob.add_linear_inequality(dn, base - z_lo, "z floor phantom");
    prob.add_linear_inequality(up, z_hi - base, "z ceil phantom");
  }

  // speed caps
  for (int j = 0; j <= n_p; ++j) {
    conic::Soc h;
    h.idx = {lay.v0(j), lay.v0(j) + 1};
    h.f_rows = MatX::Identity(2, 2);
    h.f0 = VecX::Zero(2);
    h.u = conic::LinForm::constant(lim.v_max);
    prob.add_soc(std::move(h));
    prob.add_linear_inequality(conic::LinForm::single(lay.v0(j) + 2, 1.0), lim.u_max);
    prob.add_linear_inequality(conic::LinForm::single(lay.v0(j) + 2, -1.0), lim.u_max);
  }

  // acceleration caps, including the link to the previously applied velocity
  for (int j = 0; j <= n_p; ++j) {
    conic::Soc a;
    if (j == 0) {
      a.idx = {lay.v0(0), lay.v0(0) + 1, lay.v0(0) + 2};
      a.f_rows = MatX::Identity(3, 3);
      a.f0 = -in.v_prev;
    } else {
      a.idx = {lay.v0(j), lay.v0(j) + 1, lay.v0(j) + 2,
               lay.v0(j - 1), lay.v0(j - 1) + 1, lay.v0(j - 1) + 2};
      a.f_rows = MatX::Zero(3, 6);
      a.f_rows.leftCols(3) = MatX::Identity(3, 3);
      a.f_rows.rightCols(3) = -MatX::Identity(3, 3);
      a.f0 = VecX::Zero(3);
    }
    a.u = conic::LinForm::constant(lim.a_max * lim.t_c);
    prob.add_soc(std::move(a));
  }

  // objective: path deviation (exact), bounded power, surrogate secrecy
  for (int j = 1; j <= n_p; ++j)
    prob.add_objective(conic::Term::quadratic({lay.q0(j), lay.q0(j) + 1, lay.q0(j) + 2},
                                              sc.q_b, w.w1));
  std::vector<Vec2> anchor_h(static_cast<size_t>(n_p) + 1);
  for (int j = 0; j <= n_p; ++j) {
    anchor_h[static_cast<size_t>(j)] =
        floored_anchor_speed(horizontal(anchor.v[static_cast<size_t>(j)]), sc.q_b - in.q0);
    traj_detail::add_power_terms(prob, lay, j, anchor_h[static_cast<size_t>(j)], sc.airframe,
                                 w.w2, nullptr);
  }

  // per-slot power budget with the bounded flight power
  for (int j = 0; j <= n_p; ++j) {
    conic::Constraint budget;
    budget.label = "power budget";
    budget.rhs = sc.budgets.p_max - in.traces[static_cast<size_t>(j)].tr_w.sum() -
                 in.traces[static_cast<size_t>(j)].tr_m;
    traj_detail::add_power_terms(prob, lay, j, anchor_h[static_cast<size_t>(j)], sc.airframe,
                                 1.0, &budget.terms);
    prob.add_inequality(std::move(budget));
  }

  // rate surrogates on the movable slots
  struct SlotSurrogates {
    std::vector<PositionSurrogate> per_user;
  };
  std::vector<SlotSurrogates> surr(static_cast<size_t>(n_p) + 1);
  double objective_constant = w.w1 * (in.q0 - sc.q_b).squaredNorm();
  const bool rates_on = sc.weights.w3 > 0.0 || sc.rate_floor_active() || sc.eaves_cap_active();
  for (int j = 0; j <= n_p && rates_on; ++j) {
    const Vec3 anchor_pos = (j == 0) ? in.q0 : anchor.q[static_cast<size_t>(j)];
    const auto& tr = in.traces[static_cast<size_t>(j)];
    for (int k = 0; k < sc.k_users(); ++k) {
      auto s = linearize_position_surrogates(anchor_pos, k, tr, sc.users, sc.eavesdropper,
                                             sc.propagation, sc.noise.sigma2_users[k],
                                             sc.noise.sigma2_eve,
                                             sc.iso_interference_own_distance);
      if (j == 0) {
        objective_constant -= w.w3 * s.rs_new(in.q0);
      } else {
        surr[static_cast<size_t>(j)].per_user.push_back(std::move(s));
      }
    }
  }
  prob.add_objective(conic::Term::affine(conic::LinForm::constant(objective_constant)));

  const int slack = [&]() -> int {
    // Slack restoration is for genuinely infeasible anchors. Boundary-riding
    // anchors from a previous solve can sit a hair outside (second-order
    // re-anchoring error); those go through the solver's phase 1 instead.
    if (!rates_on) return -1;
    const double real_violation = 1e-4;  // bps/Hz
    bool violated = false;
    for (int j = 1; j <= n_p && !violated; ++j)
      for (int k = 0; k < sc.k_users() && !violated; ++k) {
        const auto& s = surr[static_cast<size_t>(j)].per_user[static_cast<size_t>(k)];
        const Vec3 pos = anchor.q[static_cast<size_t>(j)];
        if (sc.rate_floor_active() && s.r_new(pos) < sc.budgets.r_min - real_violation)
          violated = true;
        if (sc.eaves_cap_active() && s.c_new(pos) > sc.budgets.r_max + real_violation)
          violated = true;
      }
    return violated ? 1 : -1;
  }();
  const auto new_slack = [&]() {
    const int idx = prob.add_scalars(1);
    prob.add_linear_inequality(conic::LinForm::single(idx, -1.0), 0.0, "slack >= 0");
    prob.add_linear_inequality(conic::LinForm::single(idx, 1.0), 1e4, "slack cap");
    prob.add_objective(
        conic::Term::affine(conic::LinForm::single(idx, 1e3 * std::max(w.w3, 1.0))));
    return idx;
  };
  std::vector<int> slack_vars;

  for (int j = 1; j <= n_p && rates_on; ++j) {
    for (int k = 0; k < sc.k_users(); ++k) {
      const auto& s = surr[static_cast<size_t>(j)].per_user[static_cast<size_t>(k)];
      // objective: -w3 * (R1 - l_R2 - l_C1 + C2)
      if (w.w3 > 0.0) {
        prob.add_objective(conic::Term::iso_log(lay.q0(j), s.user_first, -w.w3));
        prob.add_objective(conic::Term::affine(
            traj_detail::affine_of_position(lay, j, s.l_user_second, w.w3)));
        prob.add_objective(conic::Term::affine(
            traj_detail::affine_of_position(lay, j, s.l_eaves_first, w.w3)));
        prob.add_objective(conic::Term::iso_log(lay.q0(j), s.eaves_second, -w.w3));
      }
      if (sc.rate_floor_active()) {
        conic::Constraint floor;
        floor.label = "user rate floor";
        floor.rhs = -sc.budgets.r_min;
        floor.terms.push_back(conic::Term::iso_log(lay.q0(j), s.user_first, -1.0));
        floor.terms.push_back(
            conic::Term::affine(traj_detail::affine_of_position(lay, j, s.l_user_second, 1.0)));
        if (slack >= 0) {
          slack_vars.push_back(new_slack());
          floor.terms.push_back(
              conic::Term::affine(conic::LinForm::single(slack_vars.back(), -1.0)));
        }
        prob.add_inequality(std::move(floor));
      }
      if (sc.eaves_cap_active()) {
        conic::Constraint cap;
        cap.label = "eaves rate cap";
        cap.rhs = sc.budgets.r_max;
        cap.terms.push_back(
            conic::Term::affine(traj_detail::affine_of_position(lay, j, s.l_eaves_first, 1.0)));
        cap.terms.push_back(conic::Term::iso_log(lay.q0(j), s.eaves_second, -1.0));
        if (slack >= 0) {
          slack_vars.push_back(new_slack());
          cap.terms.push_back(
              conic::Term::affine(conic::LinForm::single(slack_vars.back(), -1.0)));
        }
        prob.add_inequality(std::move(cap));
      }
    }
  }

  // warm start at the anchor
  VecX x0 = VecX::Zero(prob.num_vars());
  for (int j = 0; j <= n_p; ++j)
    for (int c = 0; c < 3; ++c) x0[lay.v0(j) + c] = anchor.v[static_cast<size_t>(j)][c];
  for (int j = 1; j <= n_p; ++j)
    for (int c = 0; c < 3; ++c) x0[lay.q0(j) + c] = anchor.q[static_cast<size_t>(j)][c];
  for (int idx : slack_vars) x0[idx] = 10.0;

  conic::SolverOptions opts;
  opts.tol_rel = sc.solver.tol_rel;
  opts.gap0 = sc.solver.cold_gap0;
  const auto res = prob.solve(x0, opts);

  TrajectorySolution sol;
  sol.status = res.status;
  sol.used_slack = slack >= 0;
  sol.q.resize(static_cast<size_t>(n_p) + 1);
  sol.v.resize(static_cast<size_t>(n_p) + 1);
  sol.q[0] = in.q0;
  const auto anchor_as_solution = [&]() {
    sol.q = anchor.q;
    sol.q[0] = in.q0;
    sol.v = anchor.v;
    sol.kept_anchor = true;
    sol.surrogate_objective = trajectory_surrogate_objective(anchor, in, sc, sol.q, sol.v);
  };
  if (!res.ok()) {
    anchor_as_solution();
    return sol;
  }
  for (int j = 0; j <= n_p; ++j)
    for (int c = 0; c < 3; ++c) sol.v[static_cast<size_t>(j)][c] = res.x[lay.v0(j) + c];
  for (int j = 1; j <= n_p; ++j)
    for (int c = 0; c < 3; ++c) sol.q[static_cast<size_t>(j)][c] = res.x[lay.q0(j) + c];
  sol.surrogate_objective = trajectory_surrogate_objective(anchor, in, sc, sol.q, sol.v);

  // safeguard: never hand back a plan worse than the anchor under the same
  // surrogate (only comparable when the anchor did not need slack)
  if (slack < 0) {
    const double anchor_obj =
        trajectory_surrogate_objective(anchor, in, sc, anchor.q, anchor.v);
    if (sol.surrogate_objective > anchor_obj + 1e-7 * (1.0 + std::abs(anchor_obj))) {
      anchor_as_solution();
    }
  }
  return sol;
}

struct ScaResult {
  TrajectorySolution plan;
  int iterations = 0;
  std::vector<double> objective_history;
  bool converged = false;
};

inline ScaResult sca_trajectory_loop(const TrajectoryAnchor& initial,
                                     const TrajectoryInputs& in, const Scenario& sc,
                                     int max_iters = 12, double rel_tol = 1e-4) {
  ScaResult out;
  TrajectoryAnchor anchor = initial;
  anchor.q[0] = in.q0;
  double prev = std::numeric_limits<double>::infinity();
  bool have_plan = false;
  for (int it = 0; it < max_iters; ++it) {
    ++out.iterations;
    auto sol = solve_trajectory(anchor, in, sc);
    // re-anchoring changes the surrogate; never adopt a step that reads worse
    // than the incumbent, stop instead
    if (have_plan &&
        sol.surrogate_objective > prev + 1e-9 * std::max(1.0, std::abs(prev))) {
      out.converged = true;
      break;
    }
    out.objective_history.push_back(sol.surrogate_objective);
    const bool last = sol.kept_anchor ||
                      std::abs(prev - sol.surrogate_objective) <=
                          rel_tol * std::max(1.0, std::abs(sol.surrogate_objective));
    prev = sol.surrogate_objective;
    anchor.q = sol.q;
    anchor.v = sol.v;
    out.plan = std::move(sol);
    have_plan = true;
    if (last) {
      out.converged = true;
      break;
    }
  }
  return out;
}

}  // namespace uavsec
