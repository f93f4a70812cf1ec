#pragma once

#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "handkin/hand_parameters.hpp"
#include "handkin/kinematics.hpp"
#include "handkin/topology.hpp"
#include "handkin/types.hpp"

namespace handkin {

/// Transform parameters recorded for one sample: the camera-side state from
/// preprocessing (com, r_cam, com_depth) and the appearance-normalization
/// parameters (t, alpha_z, s).
struct TransformState {
  Vec3 t = Vec3::Zero();          // middle MCP relative to the COM-centred frame, mm
  double alpha_z = 0.0;           // in-plane angle of the middle finger, rad, (-pi, pi]
  double s = 1.0;                 // hand scale, dimensionless
  Vec3 com = Vec3::Zero();        // camera frame, mm
  Mat3 r_cam = Mat3::Identity();  // rotation taking the COM onto the optical axis
  double com_depth = 0.0;         // depth of the rotated COM, mm

  void validate() const;
  nlohmann::json to_json() const;
  static TransformState from_json(const nlohmann::json& j);
};

struct TransformParams {
  Vec3 t = Vec3::Zero();
  double alpha_z = 0.0;
  double s = 1.0;
};

enum class NormalizationStage { Recenter, Rotate, Rescale };

Mat3 rot_x(double a);
Mat3 rot_y(double a);
Mat3 rot_z(double a);

/// Rotation that maps the COM onto the positive optical axis. Throws
/// std::invalid_argument when com_z <= 0.
Mat3 camera_rotation(const Vec3& com);

/// t, alpha_z and s measured from ground-truth joints in the COM-centred frame.
TransformParams gt_transform_params(const JointSet& joints, const KinematicTopology& topo);

/// Applies one normalization stage in point space.
std::vector<Vec3> apply_normalization(std::span<const Vec3> points, const TransformState& state,
                                      NormalizationStage stage);
/// Recenter, rotate and rescale in sequence.
JointSet normalize_joints(const JointSet& joints, const TransformState& state);

/// j = Rz(alpha_z) * (s * j_norm) + t.
JointSet back_transform(const JointSet& joints_norm, const TransformState& state);

/// Inverse of the camera-side preprocessing: add com_depth to z, rotate by r_cam^T.
JointSet postprocess_to_camera(const JointSet& joints, const TransformState& state);

/// Forward camera-side preprocessing of joints: rotate by r_cam, subtract com_depth.
JointSet preprocess_joints(const JointSet& joints_camera, const TransformState& state);

/// Base pose and shape re-expressed so that fkine gives preprocess_joints(fkine(params)).
HandParameters preprocess_params(const HandParameters& params_camera, const TransformState& state);

/// Base pose and shape re-expressed so that fkine gives normalize_joints(fkine(params)).
HandParameters normalize_params(const HandParameters& params, const TransformState& state);

/// Intrinsic Z-Y-X angles (rz, ry, rx) of a rotation matrix.
std::array<double, 3> euler_zyx(const Mat3& r);

}  // namespace handkin
