#include <algorithm>
#include <cmath>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SVD>

#include "handkin/dual.hpp"
#include "handkin/kinematics.hpp"
#include "handkin/losses.hpp"

namespace handkin {

namespace {

using D5 = Dual<kDhRowsPerFinger>;
using Vec9 = Eigen::Matrix<double, 9, 1>;
using Mat95 = Eigen::Matrix<double, 9, 5>;
using Vec5 = Eigen::Matrix<double, 5, 1>;

// Residual (chain - observed) of PIP, DIP, TIP in the finger's MCP frame.
void finger_residual(const Vec5& theta, const std::array<double, 3>& bones, const std::array<Vec3, 3>& observed,
                     const FingerChain& chain, Vec9& r, Mat95* jac) {
  std::array<D5, kDhRowsPerFinger> a;
  for (int n = 0; n < kDhRowsPerFinger; ++n) a[static_cast<std::size_t>(n)] = D5(theta[n], n);
  const std::array<D5, 3> b = {D5(bones[0]), D5(bones[1]), D5(bones[2])};
  const auto pts = detail::finger_chain<D5>(detail::tf_identity<D5>(), a.data(), b.data(), chain);
  for (int k = 0; k < 3; ++k) {
    for (int c = 0; c < 3; ++c) {
      const D5& x = pts[static_cast<std::size_t>(k + 1)][static_cast<std::size_t>(c)];
      r[3 * k + c] = x.v - observed[static_cast<std::size_t>(k)][c];
      if (jac) {
        for (int n = 0; n < kDhRowsPerFinger; ++n) (*jac)(3 * k + c, n) = x.d[static_cast<std::size_t>(n)];
      }
    }
  }
}

struct FingerFit {
  Vec5 theta = Vec5::Zero();
  double cost = 0.0;  // sum of squared residuals, mm^2
  bool converged = false;
  int iterations = 0;
};

FingerFit solve_finger(const Vec5& start, const std::array<double, 3>& bones, const std::array<Vec3, 3>& observed,
                       const FingerChain& chain, const IkOptions& opt) {
  FingerFit fit;
  fit.theta = start;
  Vec9 r;
  Mat95 jac;
  finger_residual(fit.theta, bones, observed, chain, r, &jac);
  fit.cost = r.squaredNorm();
  double damping = opt.initial_damping;
  for (int it = 0; it < opt.max_iterations; ++it) {
    fit.iterations = it + 1;
    if (std::sqrt(fit.cost) < opt.tolerance) {
      fit.converged = true;
      break;
    }
    const Eigen::Matrix<double, 5, 5> jtj = jac.transpose() * jac;
    const Vec5 g = jac.transpose() * r;
    bool accepted = false;
    Vec5 step = Vec5::Zero();
    // Increase damping until the step reduces the cost.
    while (damping < 1e12) {
      Eigen::Matrix<double, 5, 5> a = jtj;
      a.diagonal().array() += damping;
      step = -a.ldlt().solve(g);
      Vec9 r_new;
      finger_residual(fit.theta + step, bones, observed, chain, r_new, nullptr);
      const double cost_new = r_new.squaredNorm();
      if (cost_new < fit.cost) {
        fit.theta += step;
        fit.cost = cost_new;
        damping = std::max(damping / 10.0, 1e-15);
        accepted = true;
        break;
      }
      damping *= 10.0;
    }
    if (!accepted || step.norm() < opt.tolerance) {
      // No further decrease possible: a (local) minimum within rounding.
      fit.converged = true;
      break;
    }
    finger_residual(fit.theta, bones, observed, chain, r, &jac);
  }
  return fit;
}

// Rotation R minimising sum |R * src_i - dst_i|^2.
Mat3 kabsch(const std::array<Vec3, 5>& src, const std::array<Vec3, 5>& dst) {
  Mat3 h = Mat3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) h += src[i] * dst[i].transpose();
  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 d = Mat3::Identity();
  d(2, 2) = (svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0 ? -1.0 : 1.0;
  return svd.matrixV() * d * svd.matrixU().transpose();
}

double overshoot(const Vec5& theta, const AngleLimits& limits, int first) {
  double s = 0.0;
  for (int n = 0; n < kDhRowsPerFinger; ++n) {
    const double a = wrap_angle(theta[n]);
    const auto i = static_cast<std::size_t>(first + n);
    s += std::pow(std::max(0.0, a - limits.up[i]), 2) + std::pow(std::max(0.0, limits.low[i] - a), 2);
  }
  return s;
}

}  // namespace

IkResult ik_angles(const JointSet& joints, const HandParameters& shape, const KinematicTopology& topo,
                   const IkOptions& options) {
  HandParameters s = shape;
  s.base_translation = {};
  s.base_orientation = {};
  s.joint_angles = {};
  s.validate();
  require(joints.all_finite(), "ik_angles: joints must be finite");
  for (Finger f : kFingers) {
    const Vec3& mcp = joints.at(f, JointType::MCP);
    const Vec3& pip = joints.at(f, JointType::PIP);
    const Vec3& dip = joints.at(f, JointType::DIP);
    const Vec3& tip = joints.at(f, JointType::TIP);
    if ((pip - mcp).norm() < 1e-9 || (dip - pip).norm() < 1e-9 || (tip - dip).norm() < 1e-9) {
      throw DegenerateInputError("ik_angles: zero-length observed bone on finger " + std::string(finger_name(f)));
    }
  }

  const Vec3 base = joints.at(Finger::M, JointType::MCP);
  const std::array<Vec3, 5> src = {s.finger_vector(Finger::T), s.finger_vector(Finger::I),
                                   s.finger_vector(Finger::R), s.finger_vector(Finger::P),
                                   Vec3(s.wrist_vector[0], s.wrist_vector[1], s.wrist_vector[2])};
  const std::array<Vec3, 5> dst = {joints.at(Finger::T, JointType::MCP) - base,
                                   joints.at(Finger::I, JointType::MCP) - base,
                                   joints.at(Finger::R, JointType::MCP) - base,
                                   joints.at(Finger::P, JointType::MCP) - base, joints[kWristIndex] - base};
  const Mat3 rot = kabsch(src, dst);

  const AngleLimits limits = topo.angle_limits();
  IkResult result;
  result.base_orientation = {std::atan2(rot(1, 0), rot(0, 0)),
                             std::asin(std::clamp(-rot(2, 0), -1.0, 1.0)),
                             std::atan2(rot(2, 1), rot(2, 2))};
  result.converged = true;
  double cost = 0.0;
  for (Finger f : kFingers) {
    // Observed chain joints expressed in the finger's MCP frame.
    const Vec3 offset = s.finger_vector(f);
    std::array<Vec3, 3> local;
    for (int k = 0; k < 3; ++k) {
      local[static_cast<std::size_t>(k)] =
          rot.transpose() * (joints.at(f, static_cast<JointType>(static_cast<int>(JointType::PIP) + k)) - base) -
          offset;
    }
    const std::array<double, 3> bones = {s.bone(f, 0), s.bone(f, 1), s.bone(f, 2)};
    // Several angle sets reach the same joints; prefer the one inside the limits.
    const int first = 5 * static_cast<int>(f);
    Vec5 mid;
    for (int n = 0; n < kDhRowsPerFinger; ++n) {
      mid[n] = 0.5 * (limits.low[static_cast<std::size_t>(first + n)] + limits.up[static_cast<std::size_t>(first + n)]);
    }
    FingerFit fit = solve_finger(mid, bones, local, topo.chain(f), options);
    const FingerFit alt = solve_finger(Vec5::Zero(), bones, local, topo.chain(f), options);
    const double tie = 1e-9 * (1.0 + fit.cost);
    if (alt.cost < fit.cost - tie ||
        (alt.cost <= fit.cost + tie && overshoot(alt.theta, limits, first) < overshoot(fit.theta, limits, first))) {
      fit = alt;
    }
    for (int n = 0; n < kDhRowsPerFinger; ++n) {
      result.angles[static_cast<std::size_t>(5 * static_cast<int>(f) + n)] = wrap_angle(fit.theta[n]);
    }
    cost += fit.cost;
    result.converged = result.converged && fit.converged;
    result.iterations = std::max(result.iterations, fit.iterations);
  }
  result.residual_mm = std::sqrt(cost);
  return result;
}

}  // namespace handkin
