#pragma once

// Beamforming subproblem: lifted beam matrices over the horizon with the
// trajectory and AN covariance fixed. Concave trace-form rate logs stay
// exact; the interference log and the leading eavesdropper log are replaced
// by tangents at the anchor, and the rank-1 constraint enters as the
// trace-minus-spectral-norm penalty with the spectral norm linearized through
// its subgradient.

#include "uavsec/conic.hpp"
#include "uavsec/rates.hpp"
#include "uavsec/scenario.hpp"

namespace uavsec {

// Deterministic dominant-eigenvector outer product u1 u1^H. Near-ties are
// broken by the lexicographically largest phase-normalized real pattern.
inline MatC spectral_subgradient(const MatC& wbar) {
  if (hermitian_error(wbar) > 1e-8 * (1.0 + wbar.cwiseAbs().maxCoeff()))
    throw ValidationError("spectral_subgradient: matrix not Hermitian");
  Eigen::SelfAdjointEigenSolver<MatC> es(wbar);
  const int n = static_cast<int>(wbar.rows());
  const VecX evals = es.eigenvalues();
  const double top = evals[n - 1];
  const double tie = 1e-9 * std::max(1.0, std::abs(top));

  const auto normalize_phase = [](VecC u) {
    for (int i = 0; i < u.size(); ++i)
      if (std::abs(u[i]) > 1e-12) {
        u *= std::conj(u[i]) / std::abs(u[i]);
        break;
      }
    return u;
  };

  VecC best;
  for (int i = n - 1; i >= 0 && evals[i] >= top - tie; --i) {
    VecC cand = normalize_phase(es.eigenvectors().col(i));
    if (best.size() == 0) {
      best = cand;
      continue;
    }
    for (int c = 0; c < n; ++c) {
      const double d = cand[c].real() - best[c].real();
      if (d > 1e-12) {
        best = cand;
        break;
      }
      if (d < -1e-12) break;
    }
  }
  if (best.size() == 0) {  // zero matrix fallback
    best = VecC::Zero(n);
    best[0] = 1.0;
  }
  return best * best.adjoint();
}

// Rank-1 extraction w = sqrt(lambda1) u1 from a lifted solution.
inline VecC dominant_beam(const MatC& w_lifted) {
  Eigen::SelfAdjointEigenSolver<MatC> es(w_lifted);
  const int n = static_cast<int>(w_lifted.rows());
  const double l1 = std::max(0.0, es.eigenvalues()[n - 1]);
  VecC u = es.eigenvectors().col(n - 1);
  for (int i = 0; i < n; ++i)
    if (std::abs(u[i]) > 1e-12) {
      u *= std::conj(u[i]) / std::abs(u[i]);
      break;
    }
  return std::sqrt(l1) * u;
}

inline double eigen_ratio(const MatC& m) {
  const VecX ev = hermitian_eigenvalues(m);
  const double l1 = std::max(ev[0], 0.0);
  if (l1 <= 0.0) return 0.0;
  return std::max(ev[1], 0.0) / l1;
}

struct DcPenaltyState {
  double delta = 0.0;
  std::vector<MatC> subgradients;  // one per matrix block
  int iteration = 0;
  bool warm = false;  // start the barrier path near the warm point
};

// Per-slot channel data with noise scaling folded in: trace arguments become
// <H_k, W> / sigma^2 + ..., keeping the log arguments O(1..1e5).
struct HorizonChannels {
  std::vector<std::vector<MatC>> h_scaled;  // [slot][user], H_k / sigma_k^2
  std::vector<MatC> g_scaled;               // [slot], G_e / sigma_e^2
  std::vector<double> flight_power_bound;   // Lemma-style bound at the slot velocity
};

inline HorizonChannels horizon_channels(const std::vector<Vec3>& q, const std::vector<Vec3>& v,
                                        const Scenario& sc) {
  HorizonChannels hc;
  const int n_slots = static_cast<int>(q.size());
  hc.h_scaled.resize(static_cast<size_t>(n_slots));
  hc.g_scaled.resize(static_cast<size_t>(n_slots));
  hc.flight_power_bound.resize(static_cast<size_t>(n_slots));
  for (int j = 0; j < n_slots; ++j) {
    auto& row = hc.h_scaled[static_cast<size_t>(j)];
    row.resize(static_cast<size_t>(sc.k_users()));
    for (int k = 0; k < sc.k_users(); ++k)
      row[static_cast<size_t>(k)] =
          lift(channel_vector(q[static_cast<size_t>(j)], sc.users[static_cast<size_t>(k)],
                              sc.propagation)) /
          sc.noise.sigma2_users[k];
    hc.g_scaled[static_cast<size_t>(j)] =
        lift(channel_vector(q[static_cast<size_t>(j)], sc.eavesdropper, sc.propagation)) /
        sc.noise.sigma2_eve;
    Vec3 anchor = v[static_cast<size_t>(j)];
    anchor.head<2>() = floored_anchor_speed(horizontal(anchor), sc.q_b - q[0]);
    // physical wattage: descent credit never buys transmit power
    hc.flight_power_bound[static_cast<size_t>(j)] =
        std::max(0.0, power_upper_bound(v[static_cast<size_t>(j)], anchor, sc.airframe));
  }
  return hc;
}

struct BeamSolveResult {
  std::vector<BeamSet> beams;  // W updated, M carried through
  double objective = 0.0;      // maximized surrogate value
  bool used_slack = false;
  conic::SolveStatus status = conic::SolveStatus::optimal;

  bool ok() const {
    return status == conic::SolveStatus::optimal ||
           status == conic::SolveStatus::near_optimal;
  }
};

// exact trace-form rates for a full horizon plan
inline double exact_user_rate_at(const HorizonChannels& hc, const std::vector<BeamSet>& beams,
                                 int j, int k) {
  const MatC& h = hc.h_scaled[static_cast<size_t>(j)][static_cast<size_t>(k)];
  const auto& b = beams[static_cast<size_t>(j)];
  double denom = 1.0 + re_trace(h, b.M);
  for (int r = 0; r < static_cast<int>(b.W.size()); ++r)
    if (r != k) denom += re_trace(h, b.W[static_cast<size_t>(r)]);
  return std::log2(1.0 + re_trace(h, b.W[static_cast<size_t>(k)]) / denom);
}

inline double exact_eaves_rate_at(const HorizonChannels& hc, const std::vector<BeamSet>& beams,
                                  int j, int k) {
  const MatC& g = hc.g_scaled[static_cast<size_t>(j)];
  const auto& b = beams[static_cast<size_t>(j)];
  return std::log2(1.0 + re_trace(g, b.W[static_cast<size_t>(k)]) /
                             (1.0 + re_trace(g, b.M)));
}

namespace beam_detail {

// Deterministic warm-start repair: scale offending beams down until the
// eavesdropper cap and budgets hold; returns false when the rate floor makes
// that impossible (callers fall back to slack restoration).
inline bool repair_warm_start(std::vector<BeamSet>& beams, const HorizonChannels& hc,
                              const Scenario& sc) {
  const int n_slots = static_cast<int>(beams.size());
  bool ok = true;
  for (int j = 0; j < n_slots; ++j) {
    auto& b = beams[static_cast<size_t>(j)];
    const double budget =
        sc.budgets.p_max - hc.flight_power_bound[static_cast<size_t>(j)] - b.an_power();
    if (b.beam_power() > 0.98 * budget && b.beam_power() > 0) {
      const double scale = std::max(0.0, 0.98 * budget / b.beam_power());
      for (auto& w : b.W) w *= scale;
    }
    if (sc.eaves_cap_active()) {
      for (int k = 0; k < sc.k_users(); ++k) {
        for (int guard = 0; guard < 60; ++guard) {
          const double c = exact_eaves_rate_at(hc, beams, j, k);
          if (c <= 0.98 * sc.budgets.r_max) break;
          b.W[static_cast<size_t>(k)] *= 0.8;
        }
      }
    }
    if (sc.rate_floor_active()) {
      for (int k = 0; k < sc.k_users(); ++k)
        if (exact_user_rate_at(hc, beams, j, k) < sc.budgets.r_min) ok = false;
    }
  }
  return ok;
}

}  // namespace beam_detail

// One penalized SDP solve at the current anchors/subgradients.
inline BeamSolveResult solve_beamforming(const std::vector<BeamSet>& warm,
                                         const HorizonChannels& hc,
                                         const DcPenaltyState& dc_state, const Scenario& sc,
                                         bool force_slack = false) {
  const int n_slots = static_cast<int>(warm.size());
  const int k_users = sc.k_users();
  const int n = sc.propagation.n_antennas;
  const double w3 = sc.weights.w3;

  conic::ConicProblem prob;
  std::vector<std::vector<conic::MatVar>> wv(static_cast<size_t>(n_slots));
  for (int j = 0; j < n_slots; ++j)
    for (int k = 0; k < k_users; ++k) {
      wv[static_cast<size_t>(j)].push_back(prob.add_hermitian(n));
      prob.require_psd(wv[static_cast<size_t>(j)].back());
    }

  // Restoration slack, one per rate row: pricing violations separately keeps
  // the other constraints active when a single row is infeasible.
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
    const double budget =
        sc.budgets.p_max - hc.flight_power_bound[static_cast<size_t>(j)] - b_warm.an_power();
    // per-slot power budget
    conic::LinForm total_tr;
    for (int k = 0; k < k_users; ++k) {
      const auto tr = conic::ConicProblem::trace_of(wv[static_cast<size_t>(j)][static_cast<size_t>(k)]);
      for (size_t i = 0; i < tr.idx.size(); ++i) total_tr.push(tr.idx[i], tr.coef[i]);
    }
    prob.add_linear_inequality(total_tr, budget, "power budget");

    const double c4 = std::log2(1.0 + re_trace(g, b_warm.M));  // constant in W

    for (int k = 0; k < k_users; ++k) {
      const MatC& h = hc.h_scaled[static_cast<size_t>(j)][static_cast<size_t>(k)];
      const auto& wk = wv[static_cast<size_t>(j)][static_cast<size_t>(k)];

      // first user log: sum_r <H,W_r> + <H,M> + 1 (noise-scaled)
      conic::LinForm arg_a = conic::LinForm::constant(1.0 + re_trace(h, b_warm.M));
      for (int r = 0; r < k_users; ++r) {
        const auto tr = conic::ConicProblem::trace_form(
            wv[static_cast<size_t>(j)][static_cast<size_t>(r)], h);
        for (size_t i = 0; i < tr.idx.size(); ++i) arg_a.push(tr.idx[i], tr.coef[i]);
      }
      // tangent of the interference log at the warm anchor
      const auto t_interf =
          linearize_interference_in_beams(h, b_warm.W, k, b_warm.M, 1.0);
      conic::LinForm l_b = conic::LinForm::constant(t_interf.value);
      for (size_t i = 0; i < t_interf.blocks.size(); ++i) {
        const int r = t_interf.blocks[i];
        const auto tr = conic::ConicProblem::trace_form(
            wv[static_cast<size_t>(j)][static_cast<size_t>(r)], t_interf.grads[i]);
        for (size_t ii = 0; ii < tr.idx.size(); ++ii) l_b.push(tr.idx[ii], tr.coef[ii]);
        l_b.c0 -= re_trace(t_interf.grads[i], t_interf.anchors[i]);
      }
      // tangent of the leading eavesdropper log in W_k
      const auto t_eave = linearize_eaves_in_beam(g, b_warm.W[static_cast<size_t>(k)],
                                                  b_warm.M, 1.0, k);
      conic::LinForm c_w = conic::ConicProblem::trace_form(wk, t_eave.grads[0]);
      c_w.c0 += t_eave.value - re_trace(t_eave.grads[0], t_eave.anchors[0]) - c4;

      if (w3 > 0.0) {
        // maximize w3 (log2(arg_a) - l_b - c_w): minimize the negation
        prob.add_objective(conic::Term::log_affine(arg_a, -w3));
        prob.add_objective(conic::Term::affine(l_b, w3));
        prob.add_objective(conic::Term::affine(c_w, w3));
      }
      if (sc.rate_floor_active()) {
        conic::Constraint floor;
        floor.label = "user rate floor";
        floor.rhs = -sc.budgets.r_min;
        floor.terms.push_back(conic::Term::log_affine(arg_a, -1.0));
        floor.terms.push_back(conic::Term::affine(l_b));
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
        cap.terms.push_back(conic::Term::affine(c_w));
        if (force_slack) {
          slack_vars.push_back(new_slack());
          cap.terms.push_back(
              conic::Term::affine(conic::LinForm::single(slack_vars.back(), -1.0)));
        }
        prob.add_inequality(std::move(cap));
      }

      // tie-breaking trace cost against flat ridges (channel-null directions)
      prob.add_objective(
          conic::Term::affine(conic::ConicProblem::trace_of(wk), 1e-6 * std::max(w3, 1.0)));

      // DC rank-1 penalty: delta * (Tr W - <subgrad, W>)
      const int block = j * k_users + k;
      if (dc_state.delta > 0.0) {
        prob.add_objective(conic::Term::affine(conic::ConicProblem::trace_of(wk),
                                               dc_state.delta));
        prob.add_objective(conic::Term::affine(
            conic::ConicProblem::trace_form(
                wk, dc_state.subgradients[static_cast<size_t>(block)]),
            -dc_state.delta));
      }
    }
  }
  if (w3 <= 0.0 && !sc.rate_floor_active()) {
    // no secrecy pressure and no QoS floor: spend nothing
    for (int j = 0; j < n_slots; ++j)
      for (int k = 0; k < k_users; ++k)
        prob.add_objective(conic::Term::affine(conic::ConicProblem::trace_of(
            wv[static_cast<size_t>(j)][static_cast<size_t>(k)], 1e-3)));
  }

  // warm start strictly inside the PSD cone
  VecX x0 = VecX::Zero(prob.num_vars());
  for (int j = 0; j < n_slots; ++j)
    for (int k = 0; k < k_users; ++k) {
      MatC w = warm[static_cast<size_t>(j)].W[static_cast<size_t>(k)];
      const double eps = std::max(1e-9, 1e-7 * std::max(1.0, w.trace().real() / n));
      w += eps * MatC::Identity(n, n);
      wv[static_cast<size_t>(j)][static_cast<size_t>(k)].pack_into(w, x0);
    }
  for (int idx : slack_vars) x0[idx] = 10.0;

  conic::SolverOptions opts;
  opts.tol_rel = sc.solver.tol_rel;
  opts.gap0 = (dc_state.iteration == 0 && !dc_state.warm) ? sc.solver.cold_gap0
                                                          : sc.solver.warm_gap0;
  auto res = prob.solve(x0, opts);
  if (!res.ok() && !force_slack) {
    // one retry with slack restoration
    return solve_beamforming(warm, hc, dc_state, sc, true);
  }

  BeamSolveResult out;
  out.status = res.status;
  out.used_slack = force_slack;
  out.beams = warm;
  if (!res.ok()) return out;
  for (int j = 0; j < n_slots; ++j)
    for (int k = 0; k < k_users; ++k)
      out.beams[static_cast<size_t>(j)].W[static_cast<size_t>(k)] =
          wv[static_cast<size_t>(j)][static_cast<size_t>(k)].unpack(res.x);
  out.objective = -res.objective;  // back to maximization sign
  return out;
}

struct DcLoopResult {
  std::vector<BeamSet> beams;
  int iterations = 0;
  bool converged = false;
  bool used_slack = false;
  double penalty_residual = 0.0;
  std::vector<double> penalized_objective_history;  // maximization sign
};

inline HorizonChannels slice_channels(const HorizonChannels& hc, int j) {
  HorizonChannels s;
  s.h_scaled = {hc.h_scaled[static_cast<size_t>(j)]};
  s.g_scaled = {hc.g_scaled[static_cast<size_t>(j)]};
  s.flight_power_bound = {hc.flight_power_bound[static_cast<size_t>(j)]};
  return s;
}

// Single-slot DC loop core: iterate penalized solves with refreshed
// subgradients until the rank residual collapses and the objective settles.
inline DcLoopResult dc_beam_loop_slot(std::vector<BeamSet> beams, const HorizonChannels& hc,
                                      const Scenario& sc, int max_iters_override = -1,
                                      bool assume_warm = false) {
  const int k_users = sc.k_users();
  DcLoopResult out;

  const double budget =
      sc.budgets.p_max - hc.flight_power_bound[0] - beams[0].an_power();
  if (budget <= 1e-9 || (sc.weights.w3 <= 0.0 && !sc.rate_floor_active())) {
    for (auto& w : beams[0].W) w.setZero();
    out.beams = std::move(beams);
    out.converged = true;
    return out;
  }

  beam_detail::repair_warm_start(beams, hc, sc);
  DcPenaltyState state;
  state.warm = assume_warm;
  state.delta = sc.dc.delta0_factor * std::max(sc.weights.w3, 1.0);
  const double delta_cap = sc.dc.delta_cap_factor * std::max(sc.weights.w3, 1.0);
  state.subgradients.resize(static_cast<size_t>(k_users));
  const auto refresh_subgradients = [&](const std::vector<BeamSet>& b) {
    for (int k = 0; k < k_users; ++k)
      state.subgradients[static_cast<size_t>(k)] =
          spectral_subgradient(b[0].W[static_cast<size_t>(k)]);
  };
  refresh_subgradients(beams);

  const auto penalty_residual = [&](const std::vector<BeamSet>& b) {
    double resid = 0.0, tr = 0.0;
    for (const auto& w : b[0].W) {
      const VecX ev = hermitian_eigenvalues(w);
      resid += std::max(0.0, w.trace().real() - std::max(ev[0], 0.0));
      tr += std::max(w.trace().real(), 0.0);
    }
    return std::make_pair(resid, tr);
  };
  const auto penalized_objective = [&](const std::vector<BeamSet>& b) {
    double v = 0.0;
    for (int k = 0; k < k_users; ++k)
      v += sc.weights.w3 *
           (exact_user_rate_at(hc, b, 0, k) - exact_eaves_rate_at(hc, b, 0, k));
    const auto [resid, tr] = penalty_residual(b);
    (void)tr;
    return v - state.delta * resid;
  };

  double prev_obj = -std::numeric_limits<double>::infinity();
  double prev_resid = std::numeric_limits<double>::infinity();
  const int iter_cap = max_iters_override > 0 ? max_iters_override : sc.dc.max_iters;
  for (int p = 0; p < iter_cap; ++p) {
    ++out.iterations;
    state.iteration = p;
    auto sol = solve_beamforming(beams, hc, state, sc);
    out.used_slack |= sol.used_slack;
    if (!sol.ok()) {
      if (std::getenv("UAVSEC_DEBUG"))
        std::fprintf(stderr, "[beam solve failed] status=%s p=%d\n",
                     conic::to_string(sol.status), p);
      break;
    }
    beams = sol.beams;
    refresh_subgradients(beams);
    const auto [resid, tr] = penalty_residual(beams);
    out.penalty_residual = resid;
    const double obj = penalized_objective(beams);
    out.penalized_objective_history.push_back(obj);
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

// The subproblem separates across horizon slots (objective, budgets, and
// rate constraints are all per-slot), so the loop runs slot by slot.
inline DcLoopResult dc_beam_loop(std::vector<BeamSet> beams, const HorizonChannels& hc,
                                 const Scenario& sc, int max_iters_override = -1,
                                 bool assume_warm = false) {
  DcLoopResult out;
  out.converged = true;
  for (int j = 0; j < static_cast<int>(beams.size()); ++j) {
    auto slot = dc_beam_loop_slot({beams[static_cast<size_t>(j)]}, slice_channels(hc, j), sc,
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
