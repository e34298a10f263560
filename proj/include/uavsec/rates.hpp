#pragma once

#include "uavsec/channel.hpp"
#include "uavsec/core.hpp"

#include <algorithm>

namespace uavsec {

// K lifted Hermitian PSD beamforming matrices plus the AN covariance for one slot.
struct BeamSet {
  std::vector<MatC> W;
  MatC M;

  static BeamSet zeros(int k_users, int n_antennas) {
    BeamSet b;
    b.W.assign(static_cast<size_t>(k_users), MatC::Zero(n_antennas, n_antennas));
    b.M = MatC::Zero(n_antennas, n_antennas);
    return b;
  }

  double beam_power() const {
    double s = 0.0;
    for (const auto& w : W) s += w.trace().real();
    return s;
  }
  double an_power() const { return M.trace().real(); }
};

struct NoisePowers {
  VecX sigma2_users;  // sigma_k^2 [W]
  double sigma2_eve = 1e-11;

  void validate() const {
    if (sigma2_users.size() == 0 || (sigma2_users.array() <= 0).any() || !(sigma2_eve > 0))
      throw ValidationError("noise powers must be strictly positive");
  }
};

inline double secrecy_rate(double r, double c) { return std::max(0.0, r - c); }

// Trace-form user rate: log2(1 + Tr(H_k W_k) / (sum_{r!=k} Tr(H_k W_r) + Tr(H_k M) + sigma_k^2)).
inline double user_rate(const MatC& h_lifted, const BeamSet& beams, int k,
                        const NoisePowers& noise) {
  const double sig = re_trace(h_lifted, beams.W[static_cast<size_t>(k)]);
  double denom = noise.sigma2_users[k] + re_trace(h_lifted, beams.M);
  for (int r = 0; r < static_cast<int>(beams.W.size()); ++r)
    if (r != k) denom += re_trace(h_lifted, beams.W[static_cast<size_t>(r)]);
  return std::log2(1.0 + sig / denom);
}

// Worst-case eavesdropping rate on user k: the eavesdropper sees no
// multi-user interference, only the AN floor.
inline double eaves_rate(const MatC& g_lifted, const BeamSet& beams, int k,
                         const NoisePowers& noise) {
  const double sig = re_trace(g_lifted, beams.W[static_cast<size_t>(k)]);
  const double denom = noise.sigma2_eve + re_trace(g_lifted, beams.M);
  return std::log2(1.0 + sig / denom);
}

struct RateReport {
  VecX user_rates;   // R_k [bps/Hz]
  VecX eaves_rates;  // C_{e,k}
  VecX secrecy;      // [R_k - C_{e,k}]^+
  double sum_rate = 0.0;
  double sum_secrecy = 0.0;
};

inline RateReport rate_report(const Vec3& uav_q, const BeamSet& beams,
                              const std::vector<NodeSite>& users, const NodeSite& eve,
                              const PropagationParams& prop, const NoisePowers& noise) {
  const int k_users = static_cast<int>(users.size());
  RateReport rep;
  rep.user_rates.resize(k_users);
  rep.eaves_rates.resize(k_users);
  rep.secrecy.resize(k_users);
  const MatC g_lift = lift(channel_vector(uav_q, eve, prop));
  for (int k = 0; k < k_users; ++k) {
    const MatC h_lift = lift(channel_vector(uav_q, users[static_cast<size_t>(k)], prop));
    rep.user_rates[k] = user_rate(h_lift, beams, k, noise);
    rep.eaves_rates[k] = eaves_rate(g_lift, beams, k, noise);
    rep.secrecy[k] = secrecy_rate(rep.user_rates[k], rep.eaves_rates[k]);
  }
  rep.sum_rate = rep.user_rates.sum();
  rep.sum_secrecy = rep.secrecy.sum();
  return rep;
}

// ---------------------------------------------------------------------------
// Isotropic position-only rate family. Beam structure is collapsed to traces:
// each |h^H w|^2 becomes Tr(W) g0 ||q - node||^-alpha N, which drops the
// array-angle overlap. Used only inside the trajectory subproblem.
// ---------------------------------------------------------------------------

struct IsoTraces {
  VecX tr_w;      // Tr(W_k) per user
  double tr_m = 0.0;
};

// log2( sum_j c_j ||q - p_j||^-alpha_j + constant ), with analytic
// derivatives in q. The log argument is affine in the path-loss terms but
// not in q, so this function is indefinite in q; see hessian().
struct IsoLog {
  struct Term {
    Vec3 site;
    double coeff;  // >= 0
    double alpha;
  };
  std::vector<Term> terms;
  double constant = 0.0;  // noise floor

  double argument(const Vec3& q) const {
    double d = constant;
    for (const auto& t : terms) d += t.coeff * std::pow((q - t.site).norm(), -t.alpha);
    return d;
  }
  double value(const Vec3& q) const { return std::log2(argument(q)); }

  Vec3 arg_gradient(const Vec3& q) const {
    Vec3 g = Vec3::Zero();
    for (const auto& t : terms) {
      const Vec3 u = q - t.site;
      const double d = u.norm();
      g += t.coeff * (-t.alpha) * std::pow(d, -t.alpha - 2.0) * u;
    }
    return g;
  }
  Vec3 gradient(const Vec3& q) const {
    return arg_gradient(q) / (argument(q) * std::numbers::ln2);
  }
  Eigen::Matrix3d hessian(const Vec3& q) const {
    Eigen::Matrix3d h_arg = Eigen::Matrix3d::Zero();
    for (const auto& t : terms) {
      const Vec3 u = q - t.site;
      const double d = u.norm();
      const double s = t.coeff * t.alpha * std::pow(d, -t.alpha - 2.0);
      h_arg += s * ((t.alpha + 2.0) / (d * d) * (u * u.transpose()) -
                    Eigen::Matrix3d::Identity());
    }
    const double a = argument(q);
    const Vec3 g = arg_gradient(q);
    return (h_arg / a - g * g.transpose() / (a * a)) / std::numbers::ln2;
  }
};

namespace detail {
inline void check_distinct(const Vec3& q, const Vec3& site) {
  if ((q - site).norm() <= 0.0)
    throw ValidationError("isotropic rate: position coincides with a node");
}
}  // namespace detail

// First log of the user-rate split: every beam trace plus the AN trace and
// the noise floor. Interference terms use the distance to their own user r;
// own_distance_interference switches them to user k's distance instead.
inline IsoLog iso_user_first(int k, const IsoTraces& tr, const std::vector<NodeSite>& users,
                             const PropagationParams& prop, double sigma2_k,
                             bool own_distance_interference = false) {
  IsoLog f;
  f.constant = sigma2_k;
  const double gn = prop.g0 * prop.n_antennas;
  for (int r = 0; r < static_cast<int>(users.size()); ++r) {
    const Vec3 site = (r != k && own_distance_interference)
                          ? users[static_cast<size_t>(k)].position
                          : users[static_cast<size_t>(r)].position;
    f.terms.push_back({site, tr.tr_w[r] * gn, prop.alpha_user});
  }
  f.terms.push_back({users[static_cast<size_t>(k)].position, tr.tr_m * gn, prop.alpha_user});
  return f;
}

// Second log of the split: interference and AN only.
inline IsoLog iso_user_second(int k, const IsoTraces& tr, const std::vector<NodeSite>& users,
                              const PropagationParams& prop, double sigma2_k,
                              bool own_distance_interference = false) {
  IsoLog f;
  f.constant = sigma2_k;
  const double gn = prop.g0 * prop.n_antennas;
  for (int r = 0; r < static_cast<int>(users.size()); ++r) {
    if (r == k) continue;
    const Vec3 site = own_distance_interference
                          ? users[static_cast<size_t>(k)].position
                          : users[static_cast<size_t>(r)].position;
    f.terms.push_back({site, tr.tr_w[r] * gn, prop.alpha_user});
  }
  f.terms.push_back({users[static_cast<size_t>(k)].position, tr.tr_m * gn, prop.alpha_user});
  return f;
}

inline IsoLog iso_eaves_first(double tr_wk, double tr_m, const NodeSite& eve,
                              const PropagationParams& prop, double sigma2_e) {
  IsoLog f;
  f.constant = sigma2_e;
  f.terms.push_back({eve.position, (tr_wk + tr_m) * prop.g0 * prop.n_antennas, prop.alpha_eve});
  return f;
}

inline IsoLog iso_eaves_second(double tr_m, const NodeSite& eve, const PropagationParams& prop,
                               double sigma2_e) {
  IsoLog f;
  f.constant = sigma2_e;
  f.terms.push_back({eve.position, tr_m * prop.g0 * prop.n_antennas, prop.alpha_eve});
  return f;
}

struct IsoSplit {
  double first = 0.0;
  double second = 0.0;
  double total() const { return first - second; }
};

inline IsoSplit iso_user_rate(const Vec3& q, int k, const IsoTraces& tr,
                              const std::vector<NodeSite>& users, const PropagationParams& prop,
                              double sigma2_k, bool own_distance_interference = false) {
  for (const auto& u : users) detail::check_distinct(q, u.position);
  return {iso_user_first(k, tr, users, prop, sigma2_k, own_distance_interference).value(q),
          iso_user_second(k, tr, users, prop, sigma2_k, own_distance_interference).value(q)};
}

inline IsoSplit iso_eaves_rate(const Vec3& q, double tr_wk, double tr_m, const NodeSite& eve,
                               const PropagationParams& prop, double sigma2_e) {
  detail::check_distinct(q, eve.position);
  return {iso_eaves_first(tr_wk, tr_m, eve, prop, sigma2_e).value(q),
          iso_eaves_second(tr_m, eve, prop, sigma2_e).value(q)};
}

inline Vec3 grad_iso_user_second(const Vec3& q, int k, const IsoTraces& tr,
                                 const std::vector<NodeSite>& users,
                                 const PropagationParams& prop, double sigma2_k) {
  return iso_user_second(k, tr, users, prop, sigma2_k).gradient(q);
}

inline Vec3 grad_iso_eaves_first(const Vec3& q, double tr_wk, double tr_m, const NodeSite& eve,
                                 const PropagationParams& prop, double sigma2_e) {
  return iso_eaves_first(tr_wk, tr_m, eve, prop, sigma2_e).gradient(q);
}

// First-order expansion of a scalar function of position at an anchor.
struct AffineOfPosition {
  double value = 0.0;  // function value at the anchor
  Vec3 grad = Vec3::Zero();
  Vec3 anchor = Vec3::Zero();

  double at(const Vec3& q) const { return value + grad.dot(q - anchor); }
};

inline AffineOfPosition linearize(const IsoLog& f, const Vec3& anchor) {
  return {f.value(anchor), f.gradient(anchor), anchor};
}

// Per-user surrogate pieces at a trajectory anchor: the subtracted user log
// and the leading eavesdropper log are replaced by their tangents, giving
// R_new = R1 - l_{R2} and C_new = l_{C1} - C2.
struct PositionSurrogate {
  IsoLog user_first;          // kept exact in the subproblem
  AffineOfPosition l_user_second;
  AffineOfPosition l_eaves_first;
  IsoLog eaves_second;        // kept exact

  double r_new(const Vec3& q) const { return user_first.value(q) - l_user_second.at(q); }
  double c_new(const Vec3& q) const { return l_eaves_first.at(q) - eaves_second.value(q); }
  double rs_new(const Vec3& q) const { return r_new(q) - c_new(q); }
};

inline PositionSurrogate linearize_position_surrogates(
    const Vec3& anchor, int k, const IsoTraces& tr, const std::vector<NodeSite>& users,
    const NodeSite& eve, const PropagationParams& prop, double sigma2_k, double sigma2_e,
    bool own_distance_interference = false) {
  for (const auto& u : users) detail::check_distinct(anchor, u.position);
  detail::check_distinct(anchor, eve.position);
  PositionSurrogate s;
  s.user_first = iso_user_first(k, tr, users, prop, sigma2_k, own_distance_interference);
  s.l_user_second =
      linearize(iso_user_second(k, tr, users, prop, sigma2_k, own_distance_interference), anchor);
  s.l_eaves_first = linearize(iso_eaves_first(tr.tr_w[k], tr.tr_m, eve, prop, sigma2_e), anchor);
  s.eaves_second = iso_eaves_second(tr.tr_m, eve, prop, sigma2_e);
  return s;
}

// ---------------------------------------------------------------------------
// Matrix-variable linearizations. Each is the tangent of a concave
// log2(affine-in-traces) term at a Hermitian anchor, so it majorizes the
// term globally; the gradient is coeff / (ln2 * argument-at-anchor).
// ---------------------------------------------------------------------------

struct MatrixTangent {
  double value = 0.0;              // log term at the anchor
  std::vector<int> blocks;         // which matrix variables the tangent touches
  std::vector<MatC> grads;         // gradient matrix per touched block
  std::vector<MatC> anchors;

  double at(const std::vector<const MatC*>& x) const {
    double v = value;
    for (size_t i = 0; i < blocks.size(); ++i) v += re_trace(grads[i], *x[i] - anchors[i]);
    return v;
  }
};

namespace detail {
inline void check_hermitian_anchor(const MatC& a, const char* what) {
  if (hermitian_error(a) > 1e-8 * (1.0 + a.cwiseAbs().maxCoeff()))
    throw ValidationError(std::string("non-Hermitian anchor in ") + what);
}
}  // namespace detail

// Tangent of log2(Tr(G W_k) + Tr(G M) + sigma_e^2) in W_k at anchor_wk (M fixed).
inline MatrixTangent linearize_eaves_in_beam(const MatC& g_lifted, const MatC& anchor_wk,
                                             const MatC& m_fixed, double sigma2_e, int block) {
  detail::check_hermitian_anchor(anchor_wk, "linearize_eaves_in_beam");
  const double arg = re_trace(g_lifted, anchor_wk) + re_trace(g_lifted, m_fixed) + sigma2_e;
  MatrixTangent t;
  t.value = std::log2(arg);
  t.blocks = {block};
  t.grads = {g_lifted / (std::numbers::ln2 * arg)};
  t.anchors = {anchor_wk};
  return t;
}

// Tangent of user k's interference log, sum_{r!=k} Tr(H_k W_r) + Tr(H_k M) + sigma_k^2,
// in the off-user beams at their anchors (M fixed).
inline MatrixTangent linearize_interference_in_beams(const MatC& h_lifted,
                                                     const std::vector<MatC>& anchor_w, int k,
                                                     const MatC& m_fixed, double sigma2_k) {
  double arg = sigma2_k + re_trace(h_lifted, m_fixed);
  for (int r = 0; r < static_cast<int>(anchor_w.size()); ++r)
    if (r != k) arg += re_trace(h_lifted, anchor_w[static_cast<size_t>(r)]);
  MatrixTangent t;
  t.value = std::log2(arg);
  const MatC grad = h_lifted / (std::numbers::ln2 * arg);
  for (int r = 0; r < static_cast<int>(anchor_w.size()); ++r) {
    if (r == k) continue;
    detail::check_hermitian_anchor(anchor_w[static_cast<size_t>(r)],
                                   "linearize_interference_in_beams");
    t.blocks.push_back(r);
    t.grads.push_back(grad);
    t.anchors.push_back(anchor_w[static_cast<size_t>(r)]);
  }
  return t;
}

// Tangent of user k's interference-plus-AN log in M at anchor_m (beams fixed).
inline MatrixTangent linearize_user_second_in_an(const MatC& h_lifted,
                                                 const std::vector<MatC>& w_fixed, int k,
                                                 const MatC& anchor_m, double sigma2_k,
                                                 int block = 0) {
  detail::check_hermitian_anchor(anchor_m, "linearize_user_second_in_an");
  double arg = sigma2_k + re_trace(h_lifted, anchor_m);
  for (int r = 0; r < static_cast<int>(w_fixed.size()); ++r)
    if (r != k) arg += re_trace(h_lifted, w_fixed[static_cast<size_t>(r)]);
  MatrixTangent t;
  t.value = std::log2(arg);
  t.blocks = {block};
  t.grads = {h_lifted / (std::numbers::ln2 * arg)};
  t.anchors = {anchor_m};
  return t;
}

// Tangent of log2(Tr(G W_k) + Tr(G M) + sigma_e^2) in M at anchor_m (W_k fixed).
inline MatrixTangent linearize_eaves_first_in_an(const MatC& g_lifted, const MatC& w_k_fixed,
                                                 const MatC& anchor_m, double sigma2_e,
                                                 int block = 0) {
  detail::check_hermitian_anchor(anchor_m, "linearize_eaves_first_in_an");
  const double arg = re_trace(g_lifted, w_k_fixed) + re_trace(g_lifted, anchor_m) + sigma2_e;
  MatrixTangent t;
  t.value = std::log2(arg);
  t.blocks = {block};
  t.grads = {g_lifted / (std::numbers::ln2 * arg)};
  t.anchors = {anchor_m};
  return t;
}

}  // namespace uavsec
