#include "handkin/normalization.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/LU>

namespace handkin {

Mat3 rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << 1, 0, 0, 0, c, -s, 0, s, c;
  return m;
}

Mat3 rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return m;
}

Mat3 rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Mat3 m;
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return m;
}

void TransformState::validate() const {
  require(t.allFinite() && com.allFinite() && r_cam.allFinite() && std::isfinite(alpha_z) &&
              std::isfinite(com_depth),
          "transform state must be finite");
  require(std::isfinite(s) && s > 0.0, "transform state: scale must be positive");
  require((r_cam * r_cam.transpose() - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9 &&
              r_cam.determinant() > 0.0,
          "transform state: r_cam must be a rotation");
}

nlohmann::json TransformState::to_json() const {
  nlohmann::json j;
  j["t_mm"] = {t.x(), t.y(), t.z()};
  j["alpha_z_rad"] = alpha_z;
  j["s"] = s;
  j["com_mm"] = {com.x(), com.y(), com.z()};
  j["com_depth_mm"] = com_depth;
  for (int r = 0; r < 3; ++r) j["r_cam"].push_back({r_cam(r, 0), r_cam(r, 1), r_cam(r, 2)});
  return j;
}

TransformState TransformState::from_json(const nlohmann::json& j) {
  TransformState st;
  try {
    const auto v3 = [](const nlohmann::json& a) { return Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()); };
    st.t = v3(j.at("t_mm"));
    st.alpha_z = j.at("alpha_z_rad").get<double>();
    st.s = j.at("s").get<double>();
    st.com = v3(j.at("com_mm"));
    st.com_depth = j.at("com_depth_mm").get<double>();
    for (int r = 0; r < 3; ++r) st.r_cam.row(r) = v3(j.at("r_cam").at(static_cast<std::size_t>(r))).transpose();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("transform state: malformed json: ") + e.what());
  }
  return st;
}

Mat3 camera_rotation(const Vec3& com) {
  require(com.allFinite(), "camera_rotation: com must be finite");
  require(com.z() > 0.0, "camera_rotation: com must lie in front of the camera");
  const double alpha_y = std::atan2(com.x(), com.z());
  const Vec3 com_y = rot_y(-alpha_y) * com;
  const double alpha_x = std::atan2(com_y.y(), com_y.z());
  return rot_x(alpha_x) * rot_y(-alpha_y);
}

TransformParams gt_transform_params(const JointSet& joints, const KinematicTopology& topo) {
  require(joints.all_finite(), "gt_transform_params: joints must be finite");
  TransformParams p;
  const Vec3 mcp = joints.at(Finger::M, JointType::MCP);
  p.t = mcp;
  const Vec3 dir = joints.at(Finger::M, JointType::TIP) - mcp;
  if (std::hypot(dir.x(), dir.y()) < 1e-9) {
    throw DegenerateInputError("gt_transform_params: middle finger has no in-plane extent");
  }
  p.alpha_z = std::atan2(dir.y(), dir.x());

  double sum = 0.0;
  for (Finger f : kFingers) {
    sum += (joints.at(f, JointType::PIP) - joints.at(f, JointType::MCP)).norm();
    sum += (joints.at(f, JointType::DIP) - joints.at(f, JointType::PIP)).norm();
    sum += (joints.at(f, JointType::TIP) - joints.at(f, JointType::DIP)).norm();
    if (f != Finger::M) sum += (joints.at(f, JointType::MCP) - mcp).norm();
  }
  sum += (joints[kWristIndex] - mcp).norm();
  p.s = sum / topo.reference_length_sum_mm;
  return p;
}

std::vector<Vec3> apply_normalization(std::span<const Vec3> points, const TransformState& state,
                                      NormalizationStage stage) {
  std::vector<Vec3> out(points.begin(), points.end());
  switch (stage) {
    case NormalizationStage::Recenter:
      for (auto& p : out) p -= state.t;
      break;
    case NormalizationStage::Rotate: {
      const Mat3 r = rot_z(-state.alpha_z);
      for (auto& p : out) p = r * p;
      break;
    }
    case NormalizationStage::Rescale:
      require(std::isfinite(state.s) && state.s > 0.0, "apply_normalization: scale must be positive");
      for (auto& p : out) p /= state.s;
      break;
  }
  return out;
}

JointSet normalize_joints(const JointSet& joints, const TransformState& state) {
  std::vector<Vec3> pts(joints.positions.begin(), joints.positions.end());
  pts = apply_normalization(pts, state, NormalizationStage::Recenter);
  pts = apply_normalization(pts, state, NormalizationStage::Rotate);
  pts = apply_normalization(pts, state, NormalizationStage::Rescale);
  JointSet out;
  for (int j = 0; j < kNumJoints; ++j) out[j] = pts[static_cast<std::size_t>(j)];
  return out;
}

JointSet back_transform(const JointSet& joints_norm, const TransformState& state) {
  require(std::isfinite(state.s) && state.s > 0.0, "back_transform: scale must be positive");
  const Mat3 r = rot_z(state.alpha_z);
  JointSet out;
  for (int j = 0; j < kNumJoints; ++j) out[j] = r * (state.s * joints_norm[j]) + state.t;
  return out;
}

JointSet postprocess_to_camera(const JointSet& joints, const TransformState& state) {
  JointSet out;
  const Mat3 inv = state.r_cam.transpose();
  for (int j = 0; j < kNumJoints; ++j) out[j] = inv * (joints[j] + Vec3(0.0, 0.0, state.com_depth));
  return out;
}

JointSet preprocess_joints(const JointSet& joints_camera, const TransformState& state) {
  JointSet out;
  for (int j = 0; j < kNumJoints; ++j) out[j] = state.r_cam * joints_camera[j] - Vec3(0.0, 0.0, state.com_depth);
  return out;
}

std::array<double, 3> euler_zyx(const Mat3& r) {
  return {std::atan2(r(1, 0), r(0, 0)), std::asin(std::clamp(-r(2, 0), -1.0, 1.0)), std::atan2(r(2, 1), r(2, 2))};
}

namespace {

HandParameters rigid_similarity(const HandParameters& p, const Mat3& rot, const Vec3& shift, double inv_scale) {
  HandParameters out = p;
  const Mat3 base = rot_z(p.base_orientation[0]) * rot_y(p.base_orientation[1]) * rot_x(p.base_orientation[2]);
  const Vec3 b(p.base_translation[0], p.base_translation[1], p.base_translation[2]);
  const Vec3 nb = inv_scale * (rot * b + shift);
  out.base_translation = {nb.x(), nb.y(), nb.z()};
  out.base_orientation = euler_zyx(rot * base);
  for (auto& v : out.finger_vectors) {
    for (double& x : v) x *= inv_scale;
  }
  for (double& x : out.wrist_vector) x *= inv_scale;
  for (double& x : out.bone_lengths) x *= inv_scale;
  return out;
}

}  // namespace

HandParameters preprocess_params(const HandParameters& params_camera, const TransformState& state) {
  params_camera.validate();
  return rigid_similarity(params_camera, state.r_cam, Vec3(0.0, 0.0, -state.com_depth), 1.0);
}

HandParameters normalize_params(const HandParameters& params, const TransformState& state) {
  params.validate();
  require(std::isfinite(state.s) && state.s > 0.0, "normalize_params: scale must be positive");
  const Mat3 r = rot_z(-state.alpha_z);
  return rigid_similarity(params, r, -(r * state.t), 1.0 / state.s);
}

}  // namespace handkin
