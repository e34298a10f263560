#pragma once

#include "uavsec/core.hpp"

#include <numbers>

namespace uavsec {

enum class NodeRole { user, eavesdropper };

struct NodeSite {
  Vec3 position = Vec3::Zero();
  NodeRole role = NodeRole::user;

  void validate() const {
    if (!all_finite(position)) throw ValidationError("node position non-finite");
    if (role == NodeRole::user && position.z() != 0.0)
      throw ValidationError("ground users sit at altitude 0");
  }
};

struct PropagationParams {
  double g0 = 1e-3;          // linear power gain at 1 m
  double alpha_user = 2.3;   // path loss exponent, user links
  double alpha_eve = 2.5;    // path loss exponent, eavesdropper link
  int n_antennas = 4;
  double d_over_lambda = 0.5;

  void validate() const {
    if (!(g0 > 0)) throw ValidationError("g0 must be positive");
    if (alpha_user < 2.0 || alpha_eve < 2.0)
      throw ValidationError("path loss exponents must be >= 2");
    if (n_antennas < 1) throw ValidationError("need at least one antenna");
    if (!(d_over_lambda > 0)) throw ValidationError("antenna spacing ratio must be positive");
  }

  double exponent_for(NodeRole role) const {
    return role == NodeRole::user ? alpha_user : alpha_eve;
  }
};

// Elevation angle-of-departure sine for a downward-oriented array:
// (uav_z - node_z) / distance.
inline double aod_sine(const Vec3& uav_q, const NodeSite& node) {
  const Vec3 d = uav_q - node.position;
  const double dist = d.norm();
  if (dist <= 0.0) throw ValidationError("aod_sine: coincident points");
  return d.z() / dist;
}

// Uniform-linear-array phase profile: entry n = exp(-j 2 pi n (d/lambda) sin).
inline VecC steering_vector(double sin_angle, const PropagationParams& p) {
  if (std::abs(sin_angle) > 1.0 + 1e-12)
    throw ValidationError("steering_vector: |sin| must be <= 1");
  VecC a(p.n_antennas);
  const double phase_step = -2.0 * std::numbers::pi * p.d_over_lambda * sin_angle;
  for (int n = 0; n < p.n_antennas; ++n)
    a[n] = std::polar(1.0, phase_step * static_cast<double>(n));
  return a;
}

// Line-of-sight channel sqrt(g0 * dist^-alpha) * steering, stored as the
// column vector h so that h^H x matches the row convention.
struct ChannelVector {
  VecC h;
};

inline ChannelVector channel_vector(const Vec3& uav_q, const NodeSite& node,
                                    const PropagationParams& p) {
  const double dist = (uav_q - node.position).norm();
  if (dist <= 0.0) throw ValidationError("channel_vector: zero distance");
  const double gain = std::sqrt(p.g0 * std::pow(dist, -p.exponent_for(node.role)));
  // The paper's row h^H carries phases exp(-j...); the column is its adjoint.
  return ChannelVector{gain * steering_vector(aod_sine(uav_q, node), p).conjugate()};
}

// Rank-1 lift h h^H; Hermitian PSD with trace ||h||^2.
inline MatC lift(const ChannelVector& ch) { return ch.h * ch.h.adjoint(); }

}  // namespace uavsec
