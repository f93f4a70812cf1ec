#include <cmath>
#include <limits>

#include <gtest/gtest.h>

#include "handkin/autodiff.hpp"
#include "handkin/losses.hpp"
#include "test_util.hpp"

using namespace handkin;

namespace {

const KinematicTopology& topo() {
  static const KinematicTopology t = KinematicTopology::default_topology();
  return t;
}

Eigen::VectorXd to_vec(const ParamVector& p) { return Eigen::Map<const Eigen::VectorXd>(p.data(), kNumParams); }

Eigen::VectorXd fk_flat(const Eigen::VectorXd& x) {
  const HandParameters p = HandParameters::unflatten(std::span<const double, kNumParams>(x.data(), kNumParams));
  const auto flat = fkine(p, topo()).flatten();
  return Eigen::Map<const Eigen::VectorXd>(flat.data(), 3 * kNumJoints);
}

}  // namespace

TEST(Dual, ArithmeticDerivatives) {
  using D = Dual<2>;
  const D x(1.3, 0), y(-0.4, 1);
  const D f = x * y + sin(x) / (y * y) - sqrt(x) + atan2(y, x);
  const double xv = 1.3, yv = -0.4;
  const double dfdx = yv + std::cos(xv) / (yv * yv) - 0.5 / std::sqrt(xv) + (-yv) / (xv * xv + yv * yv);
  const double dfdy = xv - 2.0 * std::sin(xv) / (yv * yv * yv) + xv / (xv * xv + yv * yv);
  EXPECT_NEAR(f.d[0], dfdx, 1e-12);
  EXPECT_NEAR(f.d[1], dfdy, 1e-12);
  EXPECT_EQ(f.v, xv * yv + std::sin(xv) / (yv * yv) - std::sqrt(xv) + std::atan2(yv, xv));
}

TEST(Dual, MinMaxTieTakesFirstArgument) {
  using D = Dual<2>;
  const D a(1.0, 0), b(1.0, 1);
  EXPECT_EQ(min(a, b).d[0], 1.0);
  EXPECT_EQ(max(b, a).d[1], 1.0);
  EXPECT_EQ(value_of(cos(D(0.2, 0))), std::cos(0.2));
}

TEST(Autodiff, JacobianValuesAreBitwiseFkine) {
  Rng rng = make_rng(11, 0);
  for (int t = 0; t < 10; ++t) {
    const HandParameters p = test::random_hand(rng, topo());
    const Jacobian jac = fkine_jacobian(p, topo());
    const JointSet j = fkine(p, topo());
    for (int k = 0; k < kNumJoints; ++k) EXPECT_TRUE((jac.joints[k].array() == j[k].array()).all());
  }
}

TEST(Autodiff, JacobianMatchesFiniteDifferences) {
  Rng rng = make_rng(12, 0);
  for (int t = 0; t < 10; ++t) {
    const HandParameters p = test::random_hand(rng, topo());
    const Eigen::MatrixXd ad = fkine_jacobian(p, topo()).values;
    const Eigen::MatrixXd fd = finite_diff_jacobian(fk_flat, to_vec(p.flatten()));
    EXPECT_LT(max_relative_error(ad, fd), 1e-5);
  }
}

TEST(Autodiff, MiddleFingerHasNoBaseVectorColumn) {
  Rng rng = make_rng(13, 0);
  const HandParameters p = test::random_hand(rng, topo());
  const Jacobian jac = fkine_jacobian(p, topo());
  // The index-finger vector moves only the index joints.
  const int col = param_layout::finger_vector(Finger::I);
  for (int j = 0; j < kNumJoints; ++j) {
    const bool index_joint = j >= joint_index(Finger::I, JointType::MCP) && j <= joint_index(Finger::I, JointType::TIP);
    EXPECT_EQ(jac.values.row(3 * j).segment<3>(col).isZero(0.0), !index_joint) << joint_label(j);
  }
  EXPECT_EQ(Jacobian::col_label(col), "v_I.x");
  EXPECT_EQ(Jacobian::row_label(5), "T_MCP.z");
}

TEST(Autodiff, LossGradientMatchesFiniteDifferences) {
  Rng rng = make_rng(14, 0);
  const AngleLimits limits = topo().angle_limits();
  HandParameters p = test::random_hand(rng, topo());
  const JointSet target = fkine(test::random_hand(rng, topo()), topo());
  // Push some angles outside their limits so the penalty is active.
  p.joint_angles[2] = limits.up[2] + 0.2;
  p.joint_angles[10] = limits.low[10] - 0.15;
  const double lambda = 50.0;
  auto loss = [&](const Eigen::VectorXd& x) {
    const HandParameters q = HandParameters::unflatten(std::span<const double, kNumParams>(x.data(), kNumParams));
    const std::array<JointSet, 1> est{fkine(q, topo())};
    const std::array<JointSet, 1> tgt{target};
    const std::array<AngleVector, 1> ang{q.joint_angles};
    Eigen::VectorXd out(1);
    out[0] = joint_loss(est, tgt) + lambda * constraint_loss(ang, limits);
    return out;
  };
  const ParamVector g = loss_gradient(p, target, limits, lambda, topo());
  const Eigen::MatrixXd fd = finite_diff_jacobian(loss, to_vec(p.flatten()));
  // The loss is O(1e5); compare relative to its gradient scale.
  const double scale = std::max(1.0, fd.cwiseAbs().maxCoeff());
  EXPECT_LT((to_vec(g).transpose() - fd).cwiseAbs().maxCoeff() / scale, 1e-6);
}

TEST(Autodiff, FiniteDiffNamesNonFiniteColumn) {
  auto f = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd y(1);
    y[0] = x[1] > 0.0 ? std::numeric_limits<double>::quiet_NaN() : x[0];
    return y;
  };
  Eigen::VectorXd x = Eigen::VectorXd::Zero(2);
  try {
    finite_diff_jacobian(f, x);
    FAIL() << "expected domain_error";
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("column 1"), std::string::npos);
  }
  EXPECT_THROW(finite_diff_jacobian(f, x, 0.0), std::invalid_argument);
}

TEST(Autodiff, FiniteDiffOnQuadraticIsExact) {
  auto f = [](const Eigen::VectorXd& x) {
    Eigen::VectorXd y(2);
    y << x[0] * x[0] + 3.0 * x[1], x[0] * x[1];
    return y;
  };
  Eigen::VectorXd x(2);
  x << 2.0, -1.0;
  Eigen::MatrixXd expect(2, 2);
  expect << 4.0, 3.0, -1.0, 2.0;
  EXPECT_LT(max_relative_error(finite_diff_jacobian(f, x), expect), 1e-8);
}

TEST(Autodiff, RelativeErrorDefinition) {
  Eigen::MatrixXd a(1, 2), b(1, 2);
  a << 0.5, 1000.0;
  b << 0.5 + 1e-3, 1001.0;
  EXPECT_NEAR(max_relative_error(a, b), 1e-3, 1e-12);
}
