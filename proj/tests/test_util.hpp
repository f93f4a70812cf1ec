#pragma once

#include <array>
#include <cmath>
#include <random>

#include <Eigen/Geometry>

#include "handkin/depth.hpp"
#include "handkin/hand_parameters.hpp"
#include "handkin/kinematics.hpp"
#include "handkin/renderer.hpp"
#include "handkin/topology.hpp"

namespace handkin::test {

/// Random valid hand: reference profile shape noise, angles `margin` inside the limits.
inline HandParameters random_hand(Rng& rng, const KinematicTopology& topo, double margin_rad = 0.0) {
  SamplingRegion region;
  region.angle_margin_rad = margin_rad;
  return sample_hand(HandShapeProfile::reference(), topo.angle_limits(), rng, region);
}

/// Straightforward 4x4 matrix chain, written independently of the library FK.
inline JointSet naive_fk(const HandParameters& p, const KinematicTopology& topo) {
  using Eigen::AngleAxisd;
  using Eigen::Affine3d;
  using Eigen::Translation3d;
  auto dh = [](double theta, double r, double alpha, double d) {
    Affine3d m = Affine3d::Identity();
    m = AngleAxisd(theta, Vec3::UnitZ()) * Translation3d(0, 0, d) * Translation3d(r, 0, 0) *
        AngleAxisd(alpha, Vec3::UnitX());
    return m;
  };
  const Affine3d base = Translation3d(p.base_translation[0], p.base_translation[1], p.base_translation[2]) *
                        AngleAxisd(p.base_orientation[0], Vec3::UnitZ()) *
                        AngleAxisd(p.base_orientation[1], Vec3::UnitY()) *
                        AngleAxisd(p.base_orientation[2], Vec3::UnitX());
  JointSet out;
  out[0] = base * Vec3(p.wrist_vector[0], p.wrist_vector[1], p.wrist_vector[2]);
  for (Finger f : kFingers) {
    const int fi = static_cast<int>(f);
    const FingerChain& chain = topo.fingers[static_cast<std::size_t>(fi)];
    Affine3d acc = base * Translation3d(p.finger_vector(f));
    out.at(f, JointType::MCP) = acc.translation();
    // Rows 0..dof[0]-1 are the MCP DoFs, the next dof[1] rows end at the PIP, and so on.
    const int end_pip = chain.dof[0];
    const int end_dip = chain.dof[0] + chain.dof[1];
    for (int n = 0; n < 5; ++n) {
      const DhConstants& c = chain.dh[static_cast<std::size_t>(n)];
      double r = 0.0;
      if (n == end_pip - 1) r = p.bone(f, 0);
      if (n == end_dip - 1) r = p.bone(f, 1);
      if (n == 4) r = p.bone(f, 2);
      acc = acc * dh(p.angle(f, n) + c.theta_offset_rad, r, c.alpha_rad, c.d_mm);
      if (n == end_pip - 1) out.at(f, JointType::PIP) = acc.translation();
      if (n == end_dip - 1) out.at(f, JointType::DIP) = acc.translation();
    }
    out.at(f, JointType::TIP) = acc.translation();
  }
  return out;
}

inline double max_joint_diff(const JointSet& a, const JointSet& b) {
  double m = 0.0;
  for (int j = 0; j < kNumJoints; ++j) m = std::max(m, (a[j] - b[j]).norm());
  return m;
}

}  // namespace handkin::test
