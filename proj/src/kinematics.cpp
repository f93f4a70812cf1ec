#include "handkin/kinematics.hpp"

#include <cmath>

namespace handkin {

std::array<double, 3 * kNumJoints> JointSet::flatten() const {
  std::array<double, 3 * kNumJoints> out{};
  for (int j = 0; j < kNumJoints; ++j) {
    for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(3 * j + c)] = (*this)[j][c];
  }
  return out;
}

JointSet JointSet::unflatten(std::span<const double, 3 * kNumJoints> flat) {
  JointSet s;
  for (int j = 0; j < kNumJoints; ++j) {
    s[j] = Vec3(flat[static_cast<std::size_t>(3 * j)], flat[static_cast<std::size_t>(3 * j + 1)],
                flat[static_cast<std::size_t>(3 * j + 2)]);
  }
  return s;
}

bool JointSet::all_finite() const {
  for (const auto& p : positions) {
    if (!p.allFinite()) return false;
  }
  return true;
}

Mat4 dh_matrix(double theta, double r, double alpha, double d) {
  require(std::isfinite(theta) && std::isfinite(r) && std::isfinite(alpha) && std::isfinite(d),
          "dh_matrix: inputs must be finite");
  const auto m = detail::tf_dh<double>(theta, r, alpha, d);
  return Eigen::Map<const Eigen::Matrix<double, 4, 4, Eigen::RowMajor>>(m.data());
}

Mat4 base_matrix(std::span<const double, 6> b) {
  for (double x : b) require(std::isfinite(x), "base_matrix: inputs must be finite");
  const auto m = detail::tf_base<double>(b.data());
  return Eigen::Map<const Eigen::Matrix<double, 4, 4, Eigen::RowMajor>>(m.data());
}

JointSet fkine(const HandParameters& params, const KinematicTopology& topo) {
  params.validate();
  const ParamVector flat = params.flatten();
  const auto pts = detail::fkine_generic<double>(flat.data(), topo);
  JointSet out;
  for (int j = 0; j < kNumJoints; ++j) {
    const auto& p = pts[static_cast<std::size_t>(j)];
    out[j] = Vec3(p[0], p[1], p[2]);
  }
  return out;
}

double hand_scale(const HandParameters& params, double reference_sum) {
  require(std::isfinite(reference_sum) && reference_sum > 0.0, "hand_scale: reference sum must be positive");
  double sum = 0.0;
  for (double r : params.bone_lengths) sum += r;
  for (const auto& v : params.finger_vectors) sum += std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  const auto& w = params.wrist_vector;
  sum += std::sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2]);
  return sum / reference_sum;
}

}  // namespace handkin
