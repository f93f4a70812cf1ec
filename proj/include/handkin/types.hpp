#pragma once

#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace handkin {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;

/// Raised when an input is geometrically degenerate (zero-length bone, empty box, ...).
class DegenerateInputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised on file system or format failures; the message carries the path.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Finger : int { T = 0, I = 1, M = 2, R = 3, P = 4 };
enum class JointType : int { WRIST = 0, MCP = 1, PIP = 2, DIP = 3, TIP = 4 };

inline constexpr int kNumFingers = 5;
inline constexpr int kNumJoints = 21;
inline constexpr int kNumAngles = 25;
inline constexpr int kNumBones = 15;
inline constexpr int kNumParams = 61;
inline constexpr int kDhRowsPerFinger = 5;

inline constexpr std::array<Finger, kNumFingers> kFingers = {Finger::T, Finger::I, Finger::M,
                                                            Finger::R, Finger::P};

constexpr std::string_view finger_name(Finger f) {
  constexpr std::array<std::string_view, kNumFingers> names = {"T", "I", "M", "R", "P"};
  return names[static_cast<int>(f)];
}

constexpr std::string_view joint_type_name(JointType k) {
  constexpr std::array<std::string_view, 5> names = {"WRIST", "MCP", "PIP", "DIP", "TIP"};
  return names[static_cast<int>(k)];
}

// Joint ordering: index 0 is the wrist, then MCP, PIP, DIP, TIP for T, I, M, R, P.
constexpr int joint_index(Finger f, JointType k) {
  return k == JointType::WRIST ? 0 : 1 + 4 * static_cast<int>(f) + (static_cast<int>(k) - 1);
}

inline constexpr int kWristIndex = 0;

std::string joint_label(int joint);

inline void require(bool cond, const char* what) {
  if (!cond) throw std::invalid_argument(what);
}

}  // namespace handkin
