#pragma once

// Artificial-noise subproblem: the AN covariance per horizon slot with the
// trajectory and beams fixed. User logs keep their concave leading part with
// the interference-plus-AN log linearized; on the eavesdropper side the
// leading log is linearized and the AN-only log stays exact. The rank-1
// requirement uses the same trace-minus-spectral-norm penalty as the beams.

#include "uavsec/beams.hpp"

namespace uavsec {

struct AnSolveResult {
  std::vector<BeamSet> beams;  // M updated, W carried through
  double objective = 0.0;
  bool used_slack = false;
  conic::SolveStatus status = conic::SolveStatus::optimal;

  bool ok() const {
    return status == conic::SolveStatus::optimal ||
           status == conic::SolveStatus::near_optimal;
  }
};

namespace an_detail {

// Deterministic warm repair: more jamming if the eavesdropper cap fails,
// less if the user floor fails; bounded, falls back to slack restoration.
inline bool repair_warm_start(std::vector<BeamSet>& beams, const HorizonChannels& hc,
                              const Scenario& sc) {
  const int n_slots = static_cast<int>(beams.size());
  const int n = sc.propagation.n_antennas;
  bool ok = true;
  for (int j = 0; j < n_slots; ++j) {
    auto& b = beams[static_cast<size_t>(j)];
    const double budget =
        sc.budgets.p_max - hc.flight_power_bound[static_cast<size_t>(j)] - b.beam_power();
    if (sc.an_fixed_trace) {
      const double target = std::min(*sc.an_fixed_trace, std::max(0.0, 0.98 * budget));
      const double cur = b.an_power();
      if (cur > 1e-12) {
        b.M *= target / cur;
      } else {
        const MatC g = hc.g_scaled[static_cast<size_t>(j)];
        const MatC dir = spectral_subgradient(g);
        b.M = target * dir;
      }
      continue;
    }
    if (b.an_power() > 0.98 * budget && b.an_power() > 0)
      b.M *= std::max(0.0, 0.98 * budget / b.an_power());
    if (sc.eaves_cap_active()) {
      // minimal jamming on the eavesdropper ray, in closed form:
      // log2(1 + a / (b t + 1)) <= r_max  <=>  t >= (a / (2^r - 1) - 1) / b
      const MatC& g = hc.g_scaled[static_cast<size_t>(j)];
      const double b_gain = g.trace().real();
      const double snr_cap = std::pow(2.0, sc.budgets.r_max) - 1.0;
      double t_need = 0.0;
      for (int k = 0; k < sc.k_users(); ++k) {
        const double a = re_trace(g, b.W[static_cast<size_t>(k)]);
        if (b_gain > 0.0) t_need = std::max(t_need, (a / snr_cap - 1.0) / b_gain);
      }
      t_need *= 1.02;
      if (t_need > b.an_power()) {
        if (t_need <= 0.98 * budget) {
          const MatC eve_dir = spectral_subgradient(g);
          b.M = t_need * eve_dir;
        } else {
          ok = false;
        }
      }
    }
    if (sc.rate_floor_active())
      for (int k = 0; k < sc.k_users(); ++k)
        if (exact_user_rate_at(hc, beams, j, k) < sc.budgets.r_min) ok = false;
    (void)n;
  }
  return ok;
}

}  // namespace an_detail

inline AnSolveResult solve_an(const std::vector<BeamSet>& warm, const HorizonChannels& hc,
                              const DcPenaltyState& dc_state, const Scenario& sc,
                              bool force_slack = false) {
  const int n_slots = static_cast<int>(warm.size());
  const int k_users = sc.k_users();
  const int n = sc.propagation.n_antennas;
  const double w3 = sc.weights.w3;

  conic::ConicProblem prob;
  std::vector<conic::MatVar> mv(static_cast<size_t>(n_slots));
  for (int j = 0; j < n_slots; ++j) {
    mv[static_cast<size_t>(j)] = prob.add_hermitian(n);
    prob.require_psd(mv[static_cast<size_t>(j)]);
  }

  const auto new_slack = [&]() {
    const int idx = prob.add_scalars(1);
    prob.add_linear_inequality(conic::LinForm::single(idx, -1.0), 0.0, "slack >= 0");
    prob.add_linear_inequality(conic::LinForm::single(idx, 1.0), 1e4, "slack cap");
    prob.add_objective(
        conic::Term::affine(conic::LinForm::single(idx, 1e3 * std::max(w3, 1.0))));
    return idx;
  };
  std::vector<int> slack_vars;

  for (int j = 0; j < n_slots; ++j) {
    const auto& b_warm = warm[static_cast<size_t>(j)];
    const MatC& g = hc.g_scaled[static_cast<size_t>(j)];
    const auto& m_var = mv[static_cast<size_t>(j)];
    const double budget =
        sc.budgets.p_max - hc.flight_power_bound[static_cast<size_t>(j)] - b_warm.beam_power();
    if (sc.an_fixed_trace) {
      prob.add_equality(conic::ConicProblem::trace_of(m_var),
                        std::min(*sc.an_fixed_trace, std::max(0.0, 0.98 * budget)));
      prob.add_linear_inequality(conic::ConicProblem::trace_of(m_var), budget,
                                 "power budget");
    } else {
      prob.add_linear_inequality(conic::ConicProblem::trace_of(m_var), budget,
                                 "power budget");
    }

    for (int k = 0; k < k_users; ++k) {
      const MatC& h = hc.h_scaled[static_cast<size_t>(j)][static_cast<size_t>(k)];

      // leading user log, exact in M
      double fixed_all = 1.0;
      for (int r = 0; r < k_users; ++r)
        fixed_all += re_trace(h, b_warm.W[static_cast<size_t>(r)]);
      conic::LinForm arg_r3 = conic::ConicProblem::trace_form(m_var, h);
      arg_r3.c0 += fixed_all;
      // tangent of the interference-plus-AN log in M
      const auto t_user =
          linearize_user_second_in_an(h, b_warm.W, k, b_warm.M, 1.0);
      conic::LinForm r4l = conic::ConicProblem::trace_form(m_var, t_user.grads[0]);
      r4l.c0 += t_user.value - re_trace(t_user.grads[0], t_user.anchors[0]);
      // tangent of the leading eavesdropper log in M
      const auto t_eve = linearize_eaves_first_in_an(
          g, b_warm.W[static_cast<size_t>(k)], b_warm.M, 1.0);
      conic::LinForm c3l = conic::ConicProblem::trace_form(m_var, t_eve.grads[0]);
      c3l.c0 += t_eve.value - re_trace(t_eve.grads[0], t_eve.anchors[0]);
      // AN-only eavesdropper log, exact in M
      conic::LinForm arg_c4 = conic::ConicProblem::trace_form(m_var, g);
      arg_c4.c0 += 1.0;

      if (w3 > 0.0) {
        // maximize w3 (log2(arg_r3) - r4l - c3l + log2(arg_c4))
        prob.add_objective(conic::Term::log_affine(arg_r3, -w3));
        prob.add_objective(conic::Term::affine(r4l, w3));
        prob.add_objective(conic::Term::affine(c3l, w3));
        prob.add_objective(conic::Term::log_affine(arg_c4, -w3));
      }
      if (sc.rate_floor_active()) {
        conic::Constraint floor;
        floor.label = "user rate floor";
        floor.rhs = -sc.budgets.r_min;
        floor.terms.push_back(conic::Term::log_affine(arg_r3, -1.0));
        floor.terms.push_back(conic::Term::affine(r4l));
        if (force_slack) {
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
        cap.terms.push_back(conic::Term::affine(c3l));
        cap.terms.push_back(conic::Term::log_affine(arg_c4, -1.0));
        if (force_slack) {
          slack_vars.push_back(new_slack());
          cap.terms.push_back(
              conic::Term::affine(conic::LinForm::single(slack_vars.back(), -1.0)));
        }
        prob.add_inequality(std::move(cap));
      }
    }

    // Small power price on the AN trace. Besides breaking flat ridges in
    // channel-null directions, it stops the alternating scheme from
    // ratcheting the shared budget into jamming whose marginal secrecy gain
    // is negligible while the beam subproblem could use the watts (the
    // block-coordinate structure cannot rebalance a fully spent budget).
    prob.add_objective(conic::Term::affine(conic::ConicProblem::trace_of(m_var),
                                           1e-3 * std::max(w3, 1.0)));

    // DC rank-1 penalty (ablatable)
    if (!sc.an_rank_free && dc_state.delta > 0.0) {
      prob.add_objective(
          conic::Term::affine(conic::ConicProblem::trace_of(m_var), dc_state.delta));
      prob.add_objective(conic::Term::affine(
          conic::ConicProblem::trace_form(m_var,
                                          dc_state.subgradients[static_cast<size_t>(j)]),
          -dc_state.delta));
    }
  }
  if (w3 <= 0.0) {
    // keep the AN bounded when the objective applies no pressure
    for (int j = 0; j < n_slots; ++j)
      prob.add_objective(
          conic::Term::affine(conic::ConicProblem::trace_of(mv[static_cast<size_t>(j)], 1e-3)));
  }

  VecX x0 = VecX::Zero(prob.num_vars());
  for (int j = 0; j < n_slots; ++j) {
    MatC m = warm[static_cast<size_t>(j)].M;
    const double eps = std::max(1e-9, 1e-7 * std::max(1.0, m.trace().real() / n));
    m += eps * MatC::Identity(n, n);
    mv[static_cast<size_t>(j)].pack_into(m, x0);
  }
  for (int idx : slack_vars) x0[idx] = 10.0;

  conic::SolverOptions opts;
  opts.tol_rel = sc.solver.tol_rel;
  opts.gap0 = (dc_state.iteration == 0 && !dc_state.warm) ? sc.solver.cold_gap0
                                                          : sc.solver.warm_gap0;
  auto res = prob.solve(x0, opts);
  if (!res.ok() && !force_slack) return solve_an(warm, hc, dc_state, sc, true);

  AnSolveResult out;
  out.status = res.status;
  out.used_slack = force_slack;
  out.beams = warm;
  if (!res.ok()) return out;
  for (int j = 0; j < n_slots; ++j)
    out.beams[static_cast<size_t>(j)].M = mv[static_cast<size_t>(j)].unpack(res.x);
  out.objective = -res.objective;
  return out;
}

// Single-slot penalized-solve iteration on the AN covariance.
inline DcLoopResult dc_an_loop_slot(std::vector<BeamSet> beams, const HorizonChannels& hc,
                                    const Scenario& sc, int max_iters_override = -1,
                                    bool assume_warm = false) {
  DcLoopResult out;

  const double budget =
      sc.budgets.p_max - hc.flight_power_bound[0] - beams[0].beam_power();
  const bool an_useful = sc.weights.w3 > 0.0 || sc.eaves_cap_active() ||
                         sc.an_fixed_trace.has_value();
  if (budget <= 1e-9 || !an_useful) {
    beams[0].M.setZero();
    out.beams = std::move(beams);
    out.converged = true;
    return out;
  }

  an_detail::repair_warm_start(beams, hc, sc);
  DcPenaltyState state;
  state.warm = assume_warm;
  state.delta = sc.an_rank_free ? 0.0 : sc.dc.delta0_factor * std::max(sc.weights.w3, 1.0);
  const double delta_cap = sc.dc.delta_cap_factor * std::max(sc.weights.w3, 1.0);
  state.subgradients.resize(1);
  const auto refresh = [&](const std::vector<BeamSet>& b) {
    state.subgradients[0] = spectral_subgradient(b[0].M);
  };
  refresh(beams);

  const auto penalty_residual = [&](const std::vector<BeamSet>& b) {
    const VecX ev = hermitian_eigenvalues(b[0].M);
    const double tr = std::max(b[0].M.trace().real(), 0.0);
    return std::make_pair(std::max(0.0, b[0].M.trace().real() - std::max(ev[0], 0.0)), tr);
  };
  const auto penalized_objective = [&](const std::vector<BeamSet>& b) {
    double v = 0.0;
    for (int k = 0; k < sc.k_users(); ++k)
      v += sc.weights.w3 *
           (exact_user_rate_at(hc, b, 0, k) - exact_eaves_rate_at(hc, b, 0, k));
    const auto [resid, tr] = penalty_residual(b);
    (void)tr;
    return v - state.delta * resid;
  };

  const int max_iters = sc.an_rank_free
                            ? 1
                            : (max_iters_override > 0 ? max_iters_override : sc.dc.max_iters);
  double prev_obj = -std::numeric_limits<double>::infinity();
  double prev_resid = std::numeric_limits<double>::infinity();
  for (int p = 0; p < max_iters; ++p) {
    ++out.iterations;
    state.iteration = p;
    auto sol = solve_an(beams, hc, state, sc);
    out.used_slack |= sol.used_slack;
    if (!sol.ok()) break;
    beams = sol.beams;
    refresh(beams);
    const auto [resid, tr] = penalty_residual(beams);
    out.penalty_residual = resid;
    const double obj = penalized_objective(beams);
    out.penalized_objective_history.push_back(obj);
    if (sc.an_rank_free) {
      out.converged = true;
      break;
    }
    const bool rank_done = resid <= sc.dc.resid_tol * std::max(tr, 1e-9);
    const bool obj_done =
        std::abs(obj - prev_obj) <= sc.dc.obj_tol * std::max(1.0, std::abs(obj));
    if (rank_done && obj_done) {
      out.converged = true;
      break;
    }
    if (resid > (1.0 - sc.dc.stagnation_ratio) * prev_resid)
      state.delta = std::min(2.0 * state.delta, delta_cap);
    prev_obj = obj;
    prev_resid = resid;
  }
  out.beams = std::move(beams);
  return out;
}

// Separable across horizon slots, same as the beam loop.
inline DcLoopResult dc_an_loop(std::vector<BeamSet> beams, const HorizonChannels& hc,
                               const Scenario& sc, int max_iters_override = -1,
                               bool assume_warm = false) {
  DcLoopResult out;
  out.converged = true;
  for (int j = 0; j < static_cast<int>(beams.size()); ++j) {
    auto slot = dc_an_loop_slot({beams[static_cast<size_t>(j)]}, slice_channels(hc, j), sc,
                                max_iters_override, assume_warm);
    beams[static_cast<size_t>(j)] = slot.beams[0];
    out.iterations += slot.iterations;
    out.converged &= slot.converged;
    out.used_slack |= slot.used_slack;
    out.penalty_residual += slot.penalty_residual;
    if (j == 0) out.penalized_objective_history = slot.penalized_objective_history;
  }
  out.beams = std::move(beams);
  return out;
}

}  // namespace uavsec
