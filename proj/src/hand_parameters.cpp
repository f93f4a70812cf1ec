#include "handkin/hand_parameters.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace handkin {

std::string joint_label(int joint) {
  if (joint == kWristIndex) return "WRIST";
  require(joint > 0 && joint < kNumJoints, "joint index out of range");
  const int f = (joint - 1) / 4;
  const int k = (joint - 1) % 4 + 1;
  return std::string(finger_name(static_cast<Finger>(f))) + "_" +
         std::string(joint_type_name(static_cast<JointType>(k)));
}

double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(a, two_pi);
  if (w > std::numbers::pi) w -= two_pi;
  if (w <= -std::numbers::pi) w += two_pi;
  return w;
}

ParamVector HandParameters::flatten() const {
  namespace L = param_layout;
  ParamVector out{};
  for (int i = 0; i < 3; ++i) {
    out[L::kBaseTranslation + i] = base_translation[i];
    out[L::kBaseOrientation + i] = base_orientation[i];
    out[L::kWristVector + i] = wrist_vector[i];
    for (int v = 0; v < 4; ++v) out[L::kFingerVectors + 3 * v + i] = finger_vectors[v][i];
  }
  for (int i = 0; i < kNumBones; ++i) out[L::kBoneLengths + i] = bone_lengths[i];
  for (int i = 0; i < kNumAngles; ++i) out[L::kJointAngles + i] = joint_angles[i];
  return out;
}

HandParameters HandParameters::unflatten(std::span<const double, kNumParams> flat) {
  namespace L = param_layout;
  HandParameters p;
  for (int i = 0; i < 3; ++i) {
    p.base_translation[i] = flat[L::kBaseTranslation + i];
    p.base_orientation[i] = flat[L::kBaseOrientation + i];
    p.wrist_vector[i] = flat[L::kWristVector + i];
    for (int v = 0; v < 4; ++v) p.finger_vectors[v][i] = flat[L::kFingerVectors + 3 * v + i];
  }
  for (int i = 0; i < kNumBones; ++i) p.bone_lengths[i] = flat[L::kBoneLengths + i];
  for (int i = 0; i < kNumAngles; ++i) p.joint_angles[i] = flat[L::kJointAngles + i];
  return p;
}

void HandParameters::validate() const {
  for (double x : flatten()) {
    if (!std::isfinite(x)) throw std::invalid_argument("hand parameters must be finite");
  }
  for (double r : bone_lengths) {
    if (!(r > 0.0)) throw std::invalid_argument("bone lengths must be strictly positive");
  }
}

Vec3 HandParameters::finger_vector(Finger f) const {
  switch (f) {
    case Finger::T: return {finger_vectors[0][0], finger_vectors[0][1], finger_vectors[0][2]};
    case Finger::I: return {finger_vectors[1][0], finger_vectors[1][1], finger_vectors[1][2]};
    case Finger::M: return Vec3::Zero();
    case Finger::R: return {finger_vectors[2][0], finger_vectors[2][1], finger_vectors[2][2]};
    case Finger::P: return {finger_vectors[3][0], finger_vectors[3][1], finger_vectors[3][2]};
  }
  return Vec3::Zero();
}

}  // namespace handkin
