#pragma once

// Rolling-horizon engine: per slot, a few alternating rounds of
// {trajectory step, beam DC loop, AN DC loop}, apply the first planned
// velocity, roll the state with the disturbance, re-plan. Also provides the
// open-loop full-horizon baseline and the forecast-rolled offline variant.

#include "uavsec/an.hpp"
#include "uavsec/beams.hpp"
#include "uavsec/runlog.hpp"
#include "uavsec/scenario.hpp"
#include "uavsec/trajectory.hpp"

#include <random>

namespace uavsec {

inline std::vector<Vec3> make_disturbances(const DisturbanceModel& d, int count) {
  std::vector<Vec3> out(static_cast<size_t>(count), Vec3::Zero());
  if (d.kind == DisturbanceModel::Kind::gaussian && d.sigma > 0.0) {
    std::mt19937_64 rng(d.seed);
    std::normal_distribution<double> g(0.0, d.sigma);
    for (auto& v : out) {
      const double x = g(rng), y = g(rng), z = g(rng);
      v = Vec3(x, y, z);
    }
  } else if (d.kind == DisturbanceModel::Kind::fixed_sequence) {
    for (size_t i = 0; i < out.size() && i < d.sequence.size(); ++i) out[i] = d.sequence[i];
  }
  return out;
}

inline double altitude_margin_for(const DisturbanceModel& d, const KinematicLimits& lim) {
  double m = 0.0;
  if (d.kind == DisturbanceModel::Kind::gaussian) m = 3.0 * d.sigma;
  if (d.kind == DisturbanceModel::Kind::fixed_sequence)
    for (const auto& v : d.sequence) m = std::max(m, std::abs(v.z()));
  return std::min(m, 0.25 * (lim.z_max - lim.z_min));
}

// Largest horizontal cruise speed whose bounded flight power fits the given
// fraction of the budget.
inline double budget_cruise_speed(const Scenario& sc, double frac) {
  double lo = 0.0, hi = sc.limits.v_max;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    const Vec3 v(std::max(mid, 1.0), 0.0, 0.0);
    if (power_upper_bound(v, v, sc.airframe) <= frac * sc.budgets.p_max)
      lo = mid;
    else
      hi = mid;
  }
  return std::max(lo, 1.0);
}

struct PlanState {
  std::vector<Vec3> q;          // horizon positions, q[0] = planning state
  std::vector<Vec3> v;          // horizon velocities
  std::vector<BeamSet> beams;   // per horizon slot
};

namespace engine_detail {

inline void rebuild_positions(PlanState& p, const Vec3& q0, const Scenario& sc,
                              double alt_margin) {
  const double z_lo = sc.limits.z_min + alt_margin;
  const double z_hi = sc.limits.z_max - alt_margin;
  const int n_p = static_cast<int>(p.v.size()) - 1;
  p.q.assign(static_cast<size_t>(n_p) + 1, q0);
  for (int j = 0; j < n_p; ++j) {
    Vec3 next = p.q[static_cast<size_t>(j)] + sc.limits.t_c * p.v[static_cast<size_t>(j)];
    if (next.z() < z_lo || next.z() > z_hi) {
      const double z_target = std::clamp(next.z(), z_lo, z_hi);
      double vz = (z_target - p.q[static_cast<size_t>(j)].z()) / sc.limits.t_c;
      vz = std::clamp(vz, -0.95 * sc.limits.u_max, 0.95 * sc.limits.u_max);
      p.v[static_cast<size_t>(j)].z() = vz;
      next = p.q[static_cast<size_t>(j)] + sc.limits.t_c * p.v[static_cast<size_t>(j)];
    }
    p.q[static_cast<size_t>(j) + 1] = next;
  }
}

// Matched beams on each user, projected off the eavesdropper direction so
// the initial leakage is zero, splitting 60% of the residual budget; plus a
// rank-1 AN block on the eavesdropper direction at 10% of the beam power.
// Scaled down together when the eavesdropper cap would still be violated.
inline void init_beams(PlanState& p, const Scenario& sc) {
  const int n_p = static_cast<int>(p.v.size()) - 1;
  const int k_users = sc.k_users();
  p.beams.assign(static_cast<size_t>(n_p) + 1,
                 BeamSet::zeros(k_users, sc.propagation.n_antennas));
  for (int j = 0; j <= n_p; ++j) {
    const Vec3& q = p.q[static_cast<size_t>(j)];
    Vec3 anchor_v = p.v[static_cast<size_t>(j)];
    anchor_v.head<2>() = floored_anchor_speed(horizontal(anchor_v), sc.q_b - p.q[0]);
    const double residual =
        sc.budgets.p_max - power_upper_bound(p.v[static_cast<size_t>(j)], anchor_v, sc.airframe);
    const double beam_total = std::max(0.0, 0.6 * residual);
    auto& b = p.beams[static_cast<size_t>(j)];
    const VecC g = channel_vector(q, sc.eavesdropper, sc.propagation).h.normalized();
    for (int k = 0; k < k_users; ++k) {
      const VecC h =
          channel_vector(q, sc.users[static_cast<size_t>(k)], sc.propagation).h.normalized();
      VecC dir = h - g * g.dot(h);
      if (dir.norm() < 1e-6) dir = h;  // user collinear with the eavesdropper
      dir.normalize();
      b.W[static_cast<size_t>(k)] = (beam_total / k_users) * dir * dir.adjoint();
    }
    b.M = 0.1 * beam_total * g * g.adjoint();
    if (sc.eaves_cap_active()) {
      // common scale: the eavesdropping rate is monotone in it
      const MatC g_lift = lift(channel_vector(q, sc.eavesdropper, sc.propagation));
      double lo = 0.0, hi = 1.0;
      const auto worst_c = [&](double scale) {
        double c = 0.0;
        BeamSet trial = b;
        for (auto& w : trial.W) w *= scale;
        trial.M *= scale;
        for (int k = 0; k < k_users; ++k)
          c = std::max(c, eaves_rate(g_lift, trial, k, sc.noise));
        return c;
      };
      if (worst_c(1.0) > 0.9 * sc.budgets.r_max) {
        for (int it = 0; it < 50; ++it) {
          const double mid = 0.5 * (lo + hi);
          (worst_c(mid) <= 0.9 * sc.budgets.r_max ? lo : hi) = mid;
        }
        for (auto& w : b.W) w *= lo;
        b.M *= lo;
      }
    }
  }
}

inline PlanState cold_init(const Scenario& sc, const Vec3& q0, const Vec3& v_prev, int n_p,
                           double alt_margin) {
  PlanState p;
  Vec3 dir = sc.q_b - q0;
  const double dist = dir.norm();
  if (dist > 1e-9)
    dir /= dist;
  else
    dir = Vec3(1.0, 0.0, 0.0);
  const double cruise =
      std::min({0.8 * sc.limits.v_max, budget_cruise_speed(sc, 0.6), dist / sc.limits.t_c + 1.0});
  const double dv = 0.95 * sc.limits.a_max * sc.limits.t_c;
  p.v.resize(static_cast<size_t>(n_p) + 1);
  Vec3 prev = v_prev;
  for (int j = 0; j <= n_p; ++j) {
    // fastest straight-line profile reachable under the acceleration cap
    Vec3 want = cruise * dir;
    want.z() = std::clamp(want.z(), -0.9 * sc.limits.u_max, 0.9 * sc.limits.u_max);
    Vec3 step = want - prev;
    if (step.norm() > dv) step *= dv / step.norm();
    prev += step;
    p.v[static_cast<size_t>(j)] = prev;
  }
  rebuild_positions(p, q0, sc, alt_margin);
  init_beams(p, sc);
  return p;
}

inline PlanState warm_shift(const PlanState& old, const Scenario& sc, const Vec3& q0,
                            double alt_margin) {
  PlanState p;
  p.v.assign(old.v.begin() + 1, old.v.end());
  p.v.push_back(old.v.back());
  p.beams.assign(old.beams.begin() + 1, old.beams.end());
  p.beams.push_back(old.beams.back());
  rebuild_positions(p, q0, sc, alt_margin);
  return p;
}

inline double evaluate_total_objective(const Scenario& sc, const PlanState& p) {
  double e = 0.0;
  const int n_p = static_cast<int>(p.v.size()) - 1;
  for (int j = 0; j <= n_p; ++j) {
    const Vec3& pos = p.q[static_cast<size_t>(j)];
    const auto rep = rate_report(pos, p.beams[static_cast<size_t>(j)], sc.users,
                                 sc.eavesdropper, sc.propagation, sc.noise);
    e += sc.weights.w1 * (pos - sc.q_b).squaredNorm() +
         sc.weights.w2 * power(p.v[static_cast<size_t>(j)], sc.airframe) -
         sc.weights.w3 * rep.sum_secrecy;
  }
  return e;
}

struct RoundsOutcome {
  uint32_t flags = 0;
};

// tau alternating rounds of {trajectory, beams, AN} with a monotone-objective
// safeguard: a round that worsens the exact objective is rolled back.
inline RoundsOutcome inner_rounds(PlanState& plan, const Scenario& sc, const Vec3& q0,
                                  const Vec3& v_prev, double alt_margin, int slot,
                                  ObjectiveTrace& trace, bool warm_plan = false) {
  RoundsOutcome out;
  double e_prev = evaluate_total_objective(sc, plan);
  trace.entries.push_back({slot, 0, e_prev});
  const int n_p = static_cast<int>(plan.v.size()) - 1;
  // Each stage is accepted only if the exact objective does not regress, so
  // a misbehaving stage (e.g. a slack-distorted trajectory step) cannot
  // poison the progress of the others.
  bool reverted_any = false;
  const auto guarded = [&](double e_ref, const PlanState& before) {
    const double e = evaluate_total_objective(sc, plan);
    if (e > e_ref + 2e-7 * std::max(1.0, std::abs(e_ref))) {
      plan = before;
      reverted_any = true;
      return e_ref;
    }
    return e;
  };
  for (int mu = 1; mu <= sc.mpc.tau; ++mu) {
    double e_round = e_prev;
    {
      const PlanState before = plan;
      TrajectoryAnchor anchor{plan.q, plan.v};
      TrajectoryInputs in;
      in.q0 = q0;
      in.v_prev = v_prev;
      in.altitude_margin = alt_margin;
      in.traces.resize(static_cast<size_t>(n_p) + 1);
      for (int j = 0; j <= n_p; ++j) {
        auto& t = in.traces[static_cast<size_t>(j)];
        t.tr_w.resize(sc.k_users());
        for (int k = 0; k < sc.k_users(); ++k)
          t.tr_w[k] =
              plan.beams[static_cast<size_t>(j)].W[static_cast<size_t>(k)].trace().real();
        t.tr_m = plan.beams[static_cast<size_t>(j)].an_power();
      }
      const auto traj = solve_trajectory(anchor, in, sc);
      if (traj.used_slack) out.flags |= flag_slack_restoration;
      if (traj.kept_anchor && traj.status != conic::SolveStatus::optimal &&
          traj.status != conic::SolveStatus::near_optimal)
        out.flags |= flag_hold_last_plan;
      plan.q = traj.q;
      plan.v = traj.v;
      e_round = guarded(e_round, before);
    }

    const auto hc = horizon_channels(plan.q, plan.v, sc);
    // the alternating rounds continue the DC loops, so each round gets a
    // bounded budget of penalized solves
    const int round_cap = std::min(sc.dc.max_iters, 3);
    const bool warm = warm_plan || mu > 1;
    {
      const PlanState before = plan;
      auto beam_res = dc_beam_loop(plan.beams, hc, sc, round_cap, warm);
      if (!beam_res.converged) out.flags |= flag_dc_incomplete;
      if (beam_res.used_slack) out.flags |= flag_slack_restoration;
      plan.beams = std::move(beam_res.beams);
      e_round = guarded(e_round, before);
    }
    {
      const PlanState before = plan;
      auto an_res = dc_an_loop(plan.beams, hc, sc, round_cap, warm);
      if (!an_res.converged) out.flags |= flag_dc_incomplete;
      if (an_res.used_slack) out.flags |= flag_slack_restoration;
      plan.beams = std::move(an_res.beams);
      e_round = guarded(e_round, before);
    }

    if (reverted_any) out.flags |= flag_round_reverted;
    trace.entries.push_back({slot, mu, e_round});
    const bool settled =
        std::abs(e_round - e_prev) <= sc.mpc.inner_exit_rel * std::max(1.0, std::abs(e_round));
    e_prev = e_round;
    if (settled) break;
  }
  return out;
}

inline SlotRecord make_record(const Scenario& sc, int slot, const Vec3& realized_q,
                              const Vec3& believed_q, const Vec3& v_cmd,
                              const BeamSet& beams, const UavState& prev_state,
                              uint32_t flags) {
  SlotRecord r;
  r.slot = slot;
  r.position = realized_q;
  r.believed_position = believed_q;
  r.velocity = v_cmd;
  r.p_fly = power(v_cmd, sc.airframe);
  r.p_fly_physical = std::max(0.0, r.p_fly);
  r.p_beam = beams.beam_power();
  r.p_an = beams.an_power();
  const auto rep =
      rate_report(realized_q, beams, sc.users, sc.eavesdropper, sc.propagation, sc.noise);
  r.user_rates = rep.user_rates;
  r.eaves_rates = rep.eaves_rates;
  r.secrecy_sum = rep.sum_secrecy;
  r.flags = flags;
  if (!check_feasible(prev_state, UavState{realized_q, v_cmd}, sc.limits).empty())
    r.flags |= flag_kinematic_violation;
  if (sc.rate_floor_active() && (r.user_rates.array() < sc.budgets.r_min - 1e-4).any())
    r.flags |= flag_rate_shortfall;
  if (sc.eaves_cap_active() && (r.eaves_rates.array() > sc.budgets.r_max + 1e-4).any())
    r.flags |= flag_rate_shortfall;
  return r;
}

}  // namespace engine_detail

// Receding-horizon run. The planner sees the believed state; the logged rows
// carry the realized one. Online operation means believed == realized.
inline RunLog run_receding_horizon(const Scenario& sc, const DisturbanceModel& belief_model) {
  using namespace engine_detail;
  RunLog log;
  log.k_users = sc.k_users();
  log.scheme = to_string(sc.mpc.scheme);
  log.seed = sc.mpc.disturbance.seed;

  const int cap = sc.mpc.max_slots;
  const auto d_real = make_disturbances(sc.mpc.disturbance, cap + 1);
  const auto d_belief = make_disturbances(belief_model, cap + 1);
  const double margin = altitude_margin_for(sc.mpc.disturbance, sc.limits);

  Vec3 realized = sc.q_a;
  Vec3 believed = sc.q_a;
  Vec3 v_prev = Vec3::Zero();
  UavState prev_state{sc.q_a, Vec3::Zero()};
  std::optional<PlanState> plan;

  for (int slot = 0; slot < cap; ++slot) {
    if ((believed - sc.q_b).norm() <= sc.mpc.eps) {
      log.arrived = true;
      break;
    }
    const bool warm_plan = plan.has_value();
    if (plan)
      plan = warm_shift(*plan, sc, believed, margin);
    else
      plan = cold_init(sc, believed, v_prev, sc.mpc.n_p, margin);
    const auto rounds =
        inner_rounds(*plan, sc, believed, v_prev, margin, slot, log.trace, warm_plan);
    const Vec3 v0 = plan->v[0];
    log.rows.push_back(make_record(sc, slot, realized, believed, v0, plan->beams[0],
                                   prev_state, rounds.flags));
    prev_state = UavState{realized, v0};
    realized += sc.limits.t_c * v0 + d_real[static_cast<size_t>(slot)];
    believed += sc.limits.t_c * v0 + d_belief[static_cast<size_t>(slot)];
    v_prev = v0;
  }
  if (!log.arrived) log.arrived = (believed - sc.q_b).norm() <= sc.mpc.eps;
  log.terminal_distance = (realized - sc.q_b).norm();
  return log;
}

inline RunLog run_mpc_online(const Scenario& sc) {
  // believed state rolls with the realized disturbance: perfect measurement
  return run_receding_horizon(sc, sc.mpc.disturbance);
}

inline RunLog run_mpc_offline(const Scenario& sc, const DisturbanceModel& forecast) {
  return run_receding_horizon(sc, forecast);
}

// Greedy speed profile toward the destination plus hover margin.
inline int estimate_full_horizon(const Scenario& sc, int hover_margin = 3) {
  const double cruise = std::min(0.8 * sc.limits.v_max, budget_cruise_speed(sc, 0.6));
  const double dv = 0.95 * sc.limits.a_max * sc.limits.t_c;
  double dist = (sc.q_b - sc.q_a).norm();
  double v = 0.0;
  int n = 0;
  while (dist > 0.0 && n < 200) {
    v = std::min(cruise, v + dv);
    dist -= v * sc.limits.t_c;
    ++n;
  }
  return n + hover_margin;
}

// Full-horizon plan solved once at the start, executed open loop while the
// disturbances accumulate; no replanning, no measurements.
inline RunLog run_bcd_openloop(const Scenario& sc) {
  using namespace engine_detail;
  RunLog log;
  log.k_users = sc.k_users();
  log.scheme = to_string(Scheme::bcd_openloop);
  log.seed = sc.mpc.disturbance.seed;

  const int horizon = estimate_full_horizon(sc);
  const auto d_real = make_disturbances(sc.mpc.disturbance, horizon + 1);
  const double margin = altitude_margin_for(sc.mpc.disturbance, sc.limits);

  PlanState plan = cold_init(sc, sc.q_a, Vec3::Zero(), horizon, margin);
  inner_rounds(plan, sc, sc.q_a, Vec3::Zero(), margin, 0, log.trace);

  Vec3 realized = sc.q_a;
  UavState prev_state{sc.q_a, Vec3::Zero()};
  for (int slot = 0; slot < horizon; ++slot) {
    const Vec3 v0 = plan.v[static_cast<size_t>(slot)];
    log.rows.push_back(make_record(sc, slot, realized, plan.q[static_cast<size_t>(slot)], v0,
                                   plan.beams[static_cast<size_t>(slot)], prev_state, 0));
    prev_state = UavState{realized, v0};
    realized += sc.limits.t_c * v0 + d_real[static_cast<size_t>(slot)];
  }
  log.terminal_distance = (realized - sc.q_b).norm();
  log.arrived = log.terminal_distance <= sc.mpc.eps;
  return log;
}

inline RunLog run_scheme(const Scenario& sc) {
  switch (sc.mpc.scheme) {
    case Scheme::bcd_openloop:
      return run_bcd_openloop(sc);
    case Scheme::mpc_offline: {
      DisturbanceModel zero;  // default forecast: no disturbance knowledge
      zero.kind = DisturbanceModel::Kind::none;
      return run_mpc_offline(sc, zero);
    }
    case Scheme::mpc_online:
      return run_mpc_online(sc);
  }
  throw ValidationError("unknown scheme");
}

}  // namespace uavsec
