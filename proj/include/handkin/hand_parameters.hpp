#pragma once

#include <array>
#include <span>

#include "handkin/types.hpp"

namespace handkin {

/// Offsets of each parameter group inside the flattened 61-vector.
namespace param_layout {
inline constexpr int kBaseTranslation = 0;   // 3, mm
inline constexpr int kBaseOrientation = 3;   // 3, rad, intrinsic Z-Y-X Euler
inline constexpr int kFingerVectors = 6;     // 4 x 3, mm, order T, I, R, P
inline constexpr int kWristVector = 18;      // 3, mm
inline constexpr int kBoneLengths = 21;      // 15, mm, finger-major
inline constexpr int kJointAngles = 36;      // 25, rad, finger-major

constexpr int bone(Finger f, int n) { return kBoneLengths + 3 * static_cast<int>(f) + n; }
constexpr int angle(Finger f, int n) { return kJointAngles + 5 * static_cast<int>(f) + n; }
/// Index of the first component of the vector from the base to finger f's MCP.
/// The middle finger has no vector (it sits at the base); returns -1 for it.
constexpr int finger_vector(Finger f) {
  switch (f) {
    case Finger::T: return kFingerVectors;
    case Finger::I: return kFingerVectors + 3;
    case Finger::M: return -1;
    case Finger::R: return kFingerVectors + 6;
    case Finger::P: return kFingerVectors + 9;
  }
  return -1;
}
}  // namespace param_layout

using ParamVector = std::array<double, kNumParams>;
using AngleVector = std::array<double, kNumAngles>;

/// The 61 inputs of the kinematic layer.
struct HandParameters {
  std::array<double, 3> base_translation{};
  std::array<double, 3> base_orientation{};
  std::array<std::array<double, 3>, 4> finger_vectors{};  // T, I, R, P
  std::array<double, 3> wrist_vector{};
  std::array<double, kNumBones> bone_lengths{};
  AngleVector joint_angles{};

  ParamVector flatten() const;
  static HandParameters unflatten(std::span<const double, kNumParams> flat);

  /// Throws std::invalid_argument when any value is non-finite or a bone length is not positive.
  void validate() const;

  Vec3 finger_vector(Finger f) const;  // zero for the middle finger
  double bone(Finger f, int n) const { return bone_lengths[3 * static_cast<int>(f) + n]; }
  double angle(Finger f, int n) const { return joint_angles[5 * static_cast<int>(f) + n]; }

  bool operator==(const HandParameters&) const = default;
};

/// Wraps an angle into (-pi, pi].
double wrap_angle(double a);

}  // namespace handkin
