#include "uavsec/geometry.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace uavsec;

namespace {

AirframeParams table_airframe() { return AirframeParams::make(39.2, 1.225, 1.0, 0.08); }

KinematicLimits table_limits() { return KinematicLimits{}; }

bool has_violation(const std::vector<KinematicViolation>& v, KinematicViolationKind kind) {
  for (const auto& x : v)
    if (x.kind == kind) return true;
  return false;
}

}  // namespace

TEST(Propagate, LinearUpdate) {
  UavState s{{0, 0, 500}, {0, 0, 0}};
  UavState next = propagate(s, Vec3(10, 0, 0), 10.0);
  EXPECT_EQ(next.q, Vec3(100, 0, 500));
  EXPECT_EQ(next.v, Vec3(10, 0, 0));
}

TEST(Propagate, ZeroVelocityHolds) {
  UavState s{{3, -8, 612}, {5, 5, 0}};
  UavState next = propagate(s, Vec3::Zero(), 10.0);
  EXPECT_EQ(next.q, s.q);
  EXPECT_EQ(next.v, Vec3::Zero());
}

TEST(Propagate, Componentwise) {
  UavState s{{0, 0, 500}, {0, 0, 0}};
  UavState next = propagate(s, Vec3(3, 4, 1), 10.0);
  EXPECT_EQ(next.q, Vec3(30, 40, 510));
}

TEST(Propagate, RejectsNonFinite) {
  UavState s{{0, 0, 500}, {0, 0, 0}};
  EXPECT_THROW(propagate(s, Vec3(std::nan(""), 0, 0), 10.0), ValidationError);
}

TEST(CheckFeasible, AtRestInsideBand) {
  UavState prev{{0, 0, 700}, {0, 0, 0}};
  UavState next{{0, 0, 700}, {0, 0, 0}};
  EXPECT_TRUE(check_feasible(prev, next, table_limits()).empty());
}

TEST(CheckFeasible, AltitudeFloor) {
  UavState prev{{0, 0, 550}, {0, 0, -10}};
  UavState next{{0, 0, 450}, {0, 0, -10}};
  auto v = check_feasible(prev, next, table_limits());
  EXPECT_TRUE(has_violation(v, KinematicViolationKind::altitude_low));
}

TEST(CheckFeasible, AccelerationCap) {
  // Delta-v of 100 m/s against a_max * t_c = 80 m/s.
  UavState prev{{0, 0, 700}, {0, 0, 0}};
  UavState next{{1000, 0, 700}, {100, 0, 0}};
  auto v = check_feasible(prev, next, table_limits());
  EXPECT_TRUE(has_violation(v, KinematicViolationKind::acceleration));
  UavState next_ok{{800, 0, 700}, {80, 0, 0}};
  EXPECT_FALSE(has_violation(check_feasible(prev, next_ok, table_limits()),
                             KinematicViolationKind::acceleration));
}

TEST(CheckFeasible, SpeedCaps) {
  UavState prev{{0, 0, 700}, {119, 0, 0}};
  UavState next{{0, 0, 700}, {121, 0, 0}};
  EXPECT_TRUE(has_violation(check_feasible(prev, next, table_limits()),
                            KinematicViolationKind::horizontal_speed));
  UavState next2{{0, 0, 700}, {119, 0, -31}};
  EXPECT_TRUE(has_violation(check_feasible(prev, next2, table_limits()),
                            KinematicViolationKind::vertical_speed));
}

TEST(CheckFeasible, PropagateWithHeldVelocityHasNoAccelViolation) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-20.0, 20.0);
  for (int i = 0; i < 50; ++i) {
    UavState prev{{u(rng) * 10, u(rng) * 10, 700}, {u(rng), u(rng), u(rng) / 10}};
    UavState next = propagate(prev, prev.v, table_limits().t_c);
    EXPECT_FALSE(has_violation(check_feasible(prev, next, table_limits()),
                               KinematicViolationKind::acceleration));
  }
}

TEST(Power, HoverParameterIsFour) {
  EXPECT_NEAR(table_airframe().hover_speed, 4.0, 1e-12);
}

TEST(Power, HoverPower) {
  // W^2 / (2 rho S V_h) at zero speed.
  const double p = power(Vec3::Zero(), table_airframe());
  EXPECT_NEAR(p, 156.8, 0.1);
  EXPECT_NEAR(p, 39.2 * 39.2 / (2.0 * 1.225 * 1.0 * 4.0), 1e-9);
}

TEST(Power, DescentReducesTotal) {
  const auto air = table_airframe();
  EXPECT_LT(power(Vec3(0, 0, -1), air), power(Vec3(0, 0, 0), air));
}

TEST(Power, HorizontalRotationInvariance) {
  const auto air = table_airframe();
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0.0, 2.0 * std::numbers::pi);
  for (int i = 0; i < 40; ++i) {
    const double speed = 1.0 + 25.0 * i / 40.0;
    const double a = u(rng), b = u(rng);
    const Vec3 v1(speed * std::cos(a), speed * std::sin(a), 3.0);
    const Vec3 v2(speed * std::cos(b), speed * std::sin(b), 3.0);
    EXPECT_NEAR(power(v1, air), power(v2, air), 1e-9 * std::abs(power(v1, air)));
  }
}

TEST(PowerUpperBound, RejectsSlowAnchor) {
  EXPECT_THROW(power_upper_bound(Vec3(5, 0, 0), Vec3(0.5, 0, 0), table_airframe()),
               ValidationError);
}

TEST(PowerUpperBound, DominatesPowerOnRandomDraws) {
  // Monte-Carlo dominance oracle over the feasible velocity box.
  const auto air = table_airframe();
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> uh(-120.0, 120.0);
  std::uniform_real_distribution<double> uz(-30.0, 30.0);
  int checked = 0;
  for (int i = 0; i < 2000; ++i) {
    const Vec3 v(uh(rng), uh(rng), uz(rng));
    Vec3 anchor(uh(rng), uh(rng), uz(rng));
    if (horizontal(anchor).norm() < 1.0) anchor.head<2>() = Vec2(1.5, 0.0);
    const double p = power(v, air);
    const double ub = power_upper_bound(v, anchor, air);
    EXPECT_GE(ub - p, -1e-9 * std::abs(p)) << "violated at draw " << i;
    ++checked;
  }
  EXPECT_EQ(checked, 2000);
}

TEST(PowerUpperBound, MatchedSpeedAnchorStillDominates) {
  const auto air = table_airframe();
  for (double speed : {1.0, 5.0, 20.0, 80.0, 120.0}) {
    const Vec3 v(speed, 0, 0);
    const double p = power(v, air);
    const double ub = power_upper_bound(v, v, air);
    EXPECT_GE(ub - p, -1e-9 * std::abs(p));
  }
}

TEST(PowerUpperBound, ConvexInVelocityForFixedAnchor) {
  const auto air = table_airframe();
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> uh(-40.0, 40.0);
  std::uniform_real_distribution<double> uz(-10.0, 10.0);
  std::uniform_real_distribution<double> ul(0.0, 1.0);
  const Vec3 anchor(12.0, 5.0, 0.0);
  int used = 0;
  for (int i = 0; i < 500; ++i) {
    const Vec3 v1(uh(rng), uh(rng), uz(rng));
    const Vec3 v2(uh(rng), uh(rng), uz(rng));
    const double lam = ul(rng);
    const Vec3 vm = lam * v1 + (1.0 - lam) * v2;
    const double f1 = power_upper_bound(v1, anchor, air);
    const double f2 = power_upper_bound(v2, anchor, air);
    const double fm = power_upper_bound(vm, anchor, air);
    if (!std::isfinite(f1) || !std::isfinite(f2)) continue;  // outside surrogate domain
    ++used;
    EXPECT_LE(fm, lam * f1 + (1.0 - lam) * f2 + 1e-9 * (1.0 + std::abs(f1) + std::abs(f2)));
  }
  EXPECT_GT(used, 50);
}

TEST(Airframe, RejectsNonPositive) {
  EXPECT_THROW(AirframeParams::make(0.0, 1.2, 1.0, 0.08), ValidationError);
  EXPECT_THROW(AirframeParams::make(39.2, 1.2, -1.0, 0.08), ValidationError);
}

TEST(Limits, ValidationCatchesInvertedBand) {
  KinematicLimits lim;
  lim.z_min = 900;
  lim.z_max = 500;
  EXPECT_THROW(lim.validate(), ValidationError);
}
