#include "handkin/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace handkin {

std::string Jacobian::row_label(int row) {
  static constexpr const char* kAxes[] = {"x", "y", "z"};
  return joint_label(row / 3) + "." + kAxes[row % 3];
}

std::string Jacobian::col_label(int col) {
  namespace L = param_layout;
  static constexpr const char* kAxes[] = {"x", "y", "z"};
  static constexpr const char* kVecNames[] = {"v_T", "v_I", "v_R", "v_P"};
  if (col < L::kBaseOrientation) return std::string("b_t.") + kAxes[col];
  if (col < L::kFingerVectors) return "b_rot[" + std::to_string(col - L::kBaseOrientation) + "]";
  if (col < L::kWristVector) {
    const int k = col - L::kFingerVectors;
    return std::string(kVecNames[k / 3]) + "." + kAxes[k % 3];
  }
  if (col < L::kBoneLengths) return std::string("v_W.") + kAxes[col - L::kWristVector];
  if (col < L::kJointAngles) {
    const int k = col - L::kBoneLengths;
    return "r_" + std::string(finger_name(static_cast<Finger>(k / 3))) + "," + std::to_string(k % 3 + 1);
  }
  const int k = col - L::kJointAngles;
  return "theta_" + std::string(finger_name(static_cast<Finger>(k / 5))) + "," + std::to_string(k % 5 + 1);
}

Jacobian fkine_jacobian(const HandParameters& params, const KinematicTopology& topo) {
  params.validate();
  using D = Dual<kNumParams>;
  const ParamVector flat = params.flatten();
  std::array<D, kNumParams> lam;
  for (int p = 0; p < kNumParams; ++p) lam[static_cast<std::size_t>(p)] = D(flat[static_cast<std::size_t>(p)], p);

  const auto pts = detail::fkine_generic<D>(lam.data(), topo);
  Jacobian out;
  for (int j = 0; j < kNumJoints; ++j) {
    for (int c = 0; c < 3; ++c) {
      const D& x = pts[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
      out.joints[j][c] = x.v;
      for (int p = 0; p < kNumParams; ++p) out.values(3 * j + c, p) = x.d[static_cast<std::size_t>(p)];
    }
  }
  return out;
}

Eigen::MatrixXd finite_diff_jacobian(const VectorFunction& f, const Eigen::VectorXd& x, double h) {
  require(std::isfinite(h) && h > 0.0, "finite_diff_jacobian: step must be positive");
  Eigen::MatrixXd jac;
  Eigen::VectorXd xp = x;
  for (Eigen::Index p = 0; p < x.size(); ++p) {
    const double step = h * std::max(1.0, std::abs(x[p]));
    xp[p] = x[p] + step;
    const Eigen::VectorXd fp = f(xp);
    xp[p] = x[p] - step;
    const Eigen::VectorXd fm = f(xp);
    xp[p] = x[p];
    if (!fp.allFinite() || !fm.allFinite()) {
      throw std::domain_error("finite_diff_jacobian: non-finite evaluation at column " + std::to_string(p));
    }
    if (p == 0) jac.resize(fp.size(), x.size());
    jac.col(p) = (fp - fm) / (2.0 * step);
  }
  return jac;
}

ParamVector loss_gradient(const HandParameters& params, const JointSet& target, const AngleLimits& limits,
                          double lambda_constr, const KinematicTopology& topo) {
  require(std::isfinite(lambda_constr) && lambda_constr >= 0.0, "loss_gradient: lambda must be >= 0");
  require(target.all_finite(), "loss_gradient: target must be finite");
  const Jacobian jac = fkine_jacobian(params, topo);
  Eigen::Matrix<double, Jacobian::kRows, 1> residual;
  for (int j = 0; j < kNumJoints; ++j) residual.segment<3>(3 * j) = jac.joints[j] - target[j];

  ParamVector grad{};
  const Eigen::Matrix<double, Jacobian::kCols, 1> g = jac.values.transpose() * residual;
  for (int p = 0; p < kNumParams; ++p) grad[static_cast<std::size_t>(p)] = g[p];
  if (lambda_constr > 0.0) {
    const AngleVector cg = constraint_loss_gradient(params.joint_angles, limits);
    for (int a = 0; a < kNumAngles; ++a) {
      grad[static_cast<std::size_t>(param_layout::kJointAngles + a)] += lambda_constr * cg[static_cast<std::size_t>(a)];
    }
  }
  return grad;
}

double max_relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), "max_relative_error: shape mismatch");
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < a.cols(); ++j) {
      const double den = std::max({1.0, std::abs(a(i, j)), std::abs(b(i, j))});
      worst = std::max(worst, std::abs(a(i, j) - b(i, j)) / den);
    }
  }
  return worst;
}

}  // namespace handkin
