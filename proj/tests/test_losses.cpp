#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "handkin/losses.hpp"
#include "test_util.hpp"

using namespace handkin;

namespace {

const KinematicTopology& topo() {
  static const KinematicTopology t = KinematicTopology::default_topology();
  return t;
}

AngleVector mid_angles(const AngleLimits& l) {
  AngleVector a{};
  for (int i = 0; i < kNumAngles; ++i) a[i] = 0.5 * (l.low[i] + l.up[i]);
  return a;
}

}  // namespace

TEST(ConstraintLoss, ZeroInsideAndOnLimits) {
  const AngleLimits l = topo().angle_limits();
  std::vector<AngleVector> batch{mid_angles(l), l.low, l.up};
  EXPECT_EQ(constraint_loss(batch, l), 0.0);
  for (const auto& a : batch) {
    for (double g : constraint_loss_gradient(a, l)) EXPECT_EQ(g, 0.0);
  }
}

TEST(ConstraintLoss, ClosedFormOnOvershoots) {
  const AngleLimits l = topo().angle_limits();
  AngleVector a = mid_angles(l), b = mid_angles(l);
  a[0] = l.up[0] + 0.1;
  a[7] = l.low[7] - 0.25;
  b[24] = l.up[24] + 1.5;
  const std::vector<AngleVector> batch{a, b};
  EXPECT_NEAR(constraint_loss(batch, l), 0.01 + 0.0625 + 2.25, 1e-12);
  const AngleVector g = constraint_loss_gradient(a, l);
  EXPECT_NEAR(g[0], 0.2, 1e-12);
  EXPECT_NEAR(g[7], -0.5, 1e-12);
  EXPECT_EQ(g[1], 0.0);
}

TEST(JointLoss, HalfSumOfSquares) {
  JointSet a, b;
  b[3] = Vec3(3, 4, 0);
  b[20] = Vec3(0, 0, 2);
  const std::vector<JointSet> est{a, a}, tgt{b, a};
  EXPECT_DOUBLE_EQ(joint_loss(est, tgt), 0.5 * (25.0 + 4.0));
  EXPECT_DOUBLE_EQ(e_joint(est, tgt), (5.0 + 2.0) / (2.0 * kNumJoints));
  EXPECT_THROW(e_joint(std::vector<JointSet>{}, std::vector<JointSet>{}), std::invalid_argument);
  EXPECT_THROW(joint_loss(est, std::vector<JointSet>{a}), std::invalid_argument);
}

TEST(ViolationStats, CountsPerAngleInDegrees) {
  const AngleLimits l = topo().angle_limits();
  AngleVector a = mid_angles(l);
  a[3] = l.up[3] + 2.0 * std::numbers::pi / 180.0;
  a[4] = l.low[4] - 4.0 * std::numbers::pi / 180.0;
  const std::vector<AngleVector> batch{a, mid_angles(l)};
  const ViolationStats s = violation_stats(batch, l);
  EXPECT_DOUBLE_EQ(s.violated_fraction, 2.0 / 50.0);
  EXPECT_NEAR(s.avg_violation_given_violation_deg, 3.0, 1e-12);
  EXPECT_NEAR(s.avg_violation_total_deg, 6.0 / 50.0, 1e-12);

  const ViolationStats none = violation_stats(std::vector<AngleVector>{mid_angles(l)}, l);
  EXPECT_EQ(none.violated_fraction, 0.0);
  EXPECT_EQ(none.avg_violation_given_violation_deg, 0.0);
  const auto report = metrics_report(1.5, s);
  for (const char* key : {"e_joint_mm", "violated_fraction", "avg_violation_deg", "avg_violation_total_deg"}) {
    EXPECT_TRUE(report.contains(key)) << key;
  }
}

TEST(InverseKinematics, RecoversSampledPoses) {
  Rng rng = make_rng(21, 0);
  for (int t = 0; t < 50; ++t) {
    const HandParameters p = test::random_hand(rng, topo(), 5.0 * std::numbers::pi / 180.0);
    const IkResult r = ik_angles(fkine(p, topo()), p, topo());
    EXPECT_LT(r.residual_mm, 1e-6);
    for (int a = 0; a < kNumAngles; ++a) EXPECT_NEAR(r.angles[a], p.joint_angles[a], 1e-6) << "angle " << a;
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(wrap_angle(r.base_orientation[k] - p.base_orientation[k]), 0.0, 1e-9);
  }
}

TEST(InverseKinematics, PerturbedJointsGiveBestFitResidual) {
  Rng rng = make_rng(22, 0);
  const HandParameters p = test::random_hand(rng, topo(), 0.1);
  JointSet j = fkine(p, topo());
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int k = 1; k < kNumJoints; ++k) {
    if (k % 4 == 1) continue;  // keep MCPs exact so the base fit is unchanged
    j[k] += Vec3(noise(rng), noise(rng), noise(rng));
  }
  const IkResult r = ik_angles(j, p, topo());
  EXPECT_GT(r.residual_mm, 0.0);
  // Least squares: the fit is no worse than the generating angles.
  HandParameters gen = p;
  gen.base_orientation = r.base_orientation;
  double cost_gen = 0.0;
  const JointSet g = fkine(gen, topo());
  for (int k = 1; k < kNumJoints; ++k) {
    if (k % 4 != 1) cost_gen += (g[k] - j[k]).squaredNorm();
  }
  EXPECT_LE(r.residual_mm, std::sqrt(cost_gen) + 1e-9);
}

TEST(InverseKinematics, DegenerateBoneThrows) {
  Rng rng = make_rng(23, 0);
  const HandParameters p = test::random_hand(rng, topo(), 0.1);
  JointSet j = fkine(p, topo());
  j.at(Finger::R, JointType::DIP) = j.at(Finger::R, JointType::PIP);
  EXPECT_THROW(ik_angles(j, p, topo()), DegenerateInputError);
}
