#pragma once

#include "uavsec/core.hpp"

#include <limits>

namespace uavsec {

// Position [m] and velocity [m/s] of the vehicle at one slot.
struct UavState {
  Vec3 q = Vec3::Zero();
  Vec3 v = Vec3::Zero();
};

struct KinematicLimits {
  double z_min = 500.0;   // minimum flight altitude [m]
  double z_max = 900.0;   // maximum flight altitude [m]
  double v_max = 120.0;   // horizontal speed cap [m/s]
  double u_max = 30.0;    // vertical speed cap [m/s]
  double a_max = 8.0;     // acceleration cap [m/s^2]
  double t_c = 10.0;      // slot length [s]

  void validate() const {
    if (!(z_min > 0 && z_max > 0 && v_max > 0 && u_max > 0 && a_max > 0 && t_c > 0))
      throw ValidationError("kinematic limits must be strictly positive");
    if (!(z_min < z_max))
      throw ValidationError("altitude band inverted: z_min must be < z_max");
  }
};

// Rotor-craft power model constants. The weight enters the model in force
// units; the hover speed is derived on construction and kept consistent.
struct AirframeParams {
  double weight = 39.2;     // W
  double rho = 1.225;       // air density [kg/m^3]
  double disc_area = 1.0;   // rotor disc area S [m^2]
  double zeta = 0.08;       // profile drag coefficient
  double hover_speed = 4.0; // V_h = sqrt(W / (2 rho S)) [m/s]

  static AirframeParams make(double weight, double rho, double disc_area, double zeta) {
    if (!(weight > 0 && rho > 0 && disc_area > 0 && zeta > 0))
      throw ValidationError("airframe parameters must be strictly positive");
    AirframeParams p;
    p.weight = weight;
    p.rho = rho;
    p.disc_area = disc_area;
    p.zeta = zeta;
    p.hover_speed = std::sqrt(weight / (2.0 * rho * disc_area));
    return p;
  }
};

// One-slot kinematic update: q <- q + v_cmd * t_c, v <- v_cmd.
inline UavState propagate(const UavState& state, const Vec3& v_cmd, double t_c) {
  if (!all_finite(state.q) || !all_finite(state.v) || !all_finite(v_cmd) || !std::isfinite(t_c))
    throw ValidationError("propagate: non-finite input");
  return UavState{state.q + v_cmd * t_c, v_cmd};
}

enum class KinematicViolationKind {
  altitude_low,
  altitude_high,
  horizontal_speed,
  vertical_speed,
  acceleration,
};

struct KinematicViolation {
  KinematicViolationKind kind;
  double amount;  // by how much the limit is exceeded
};

// Checks the transition prev -> next against the altitude band, both speed
// caps, and the per-slot acceleration cap. Reports violations, never throws.
inline std::vector<KinematicViolation> check_feasible(const UavState& prev,
                                                      const UavState& next,
                                                      const KinematicLimits& lim,
                                                      double tol = 1e-6) {
  std::vector<KinematicViolation> out;
  if (next.q.z() < lim.z_min - tol)
    out.push_back({KinematicViolationKind::altitude_low, lim.z_min - next.q.z()});
  if (next.q.z() > lim.z_max + tol)
    out.push_back({KinematicViolationKind::altitude_high, next.q.z() - lim.z_max});
  const double h_speed = horizontal(next.v).norm();
  if (h_speed > lim.v_max + tol)
    out.push_back({KinematicViolationKind::horizontal_speed, h_speed - lim.v_max});
  if (std::abs(next.v.z()) > lim.u_max + tol)
    out.push_back({KinematicViolationKind::vertical_speed, std::abs(next.v.z()) - lim.u_max});
  const double dv = (next.v - prev.v).norm();
  if (dv > lim.a_max * lim.t_c + tol)
    out.push_back({KinematicViolationKind::acceleration, dv - lim.a_max * lim.t_c});
  return out;
}

// Three-term rotor power model: induced power during horizontal flight,
// climb power W*v_z, and blade profile drag. The climb term is signed, so
// the total can go negative in steep descent; callers that need a physical
// wattage clamp at zero themselves.
inline double power(const Vec3& v, const AirframeParams& air) {
  if (!all_finite(v)) throw ValidationError("power: non-finite velocity");
  const double vh2 = horizontal(v).squaredNorm();
  const double vh4 = vh2 * vh2;
  const double vh4_term = std::sqrt(vh4 + 4.0 * std::pow(air.hover_speed, 4));
  const double induced =
      air.weight * air.weight / (std::sqrt(2.0) * air.rho * air.disc_area) /
      std::sqrt(vh2 + vh4_term);
  const double climb = air.weight * v.z();
  const double profile =
      air.zeta * air.rho * air.disc_area / 8.0 * std::pow(std::sqrt(vh2), 3);
  return induced + climb + profile;
}

// Affine-in-velocity argument of the induced-power surrogate. Positive on
// the surrogate's domain; the anchored bound is vacuous (+inf) outside it.
inline double power_bound_argument(const Vec2& v_h, const Vec2& v_h_anchor, double hover_speed) {
  const double an2 = v_h_anchor.squaredNorm();
  const double vh4 = std::pow(hover_speed, 4);
  const double g = 1.0 / std::sqrt(an2 * an2 + 4.0 * vh4);
  const double inner = v_h.dot(v_h_anchor);
  const double f_base = g * (4.0 * vh4 + 2.0 * inner - an2);
  return f_base + 2.0 * inner - an2;
}

// Horizontal anchor speeds below 1 m/s break the power-bound hypothesis;
// project them up, steering degenerate anchors along a fallback direction.
inline Vec2 floored_anchor_speed(const Vec2& v_h, const Vec3& fallback_dir) {
  const double n = v_h.norm();
  if (n >= 1.0) return v_h;
  if (n > 1e-9) return v_h / n;
  const Vec2 dir = horizontal(fallback_dir);
  if (dir.norm() > 1e-9) return dir.normalized();
  return Vec2(1.0, 0.0);
}

// Convex upper bound on power(v) anchored at v_anchor. Valid whenever the
// anchor's horizontal speed is at least 1 m/s; anchors below that are
// rejected because the dominance argument breaks down there.
inline double power_upper_bound(const Vec3& v, const Vec3& v_anchor, const AirframeParams& air) {
  if (!all_finite(v) || !all_finite(v_anchor))
    throw ValidationError("power_upper_bound: non-finite input");
  const Vec2 anchor_h = horizontal(v_anchor);
  if (anchor_h.norm() < 1.0)
    throw ValidationError("power_upper_bound: anchor horizontal speed below 1 m/s");
  const double arg = power_bound_argument(horizontal(v), anchor_h, air.hover_speed);
  if (arg <= 0.0) return std::numeric_limits<double>::infinity();
  const double vh2 = horizontal(v).squaredNorm();
  const double induced =
      air.weight * air.weight / (std::sqrt(2.0) * air.rho * air.disc_area) / std::sqrt(arg);
  const double climb = air.weight * v.z();
  const double profile =
      air.zeta * air.rho * air.disc_area / 8.0 * std::pow(std::sqrt(vh2), 3);
  return induced + climb + profile;
}

}  // namespace uavsec
