#pragma once

#include <array>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "handkin/types.hpp"

namespace handkin {

/// Fixed constants of one DH row. The joint angle and the link length r are
/// supplied by the hand parameters; r is zero unless the row closes a joint.
struct DhConstants {
  double alpha_rad = 0.0;
  double d_mm = 0.0;
  double theta_offset_rad = 0.0;
};

struct AngleLimit {
  double low_rad = 0.0;
  double up_rad = 0.0;
};

struct FingerChain {
  std::array<DhConstants, kDhRowsPerFinger> dh{};
  // DoF of MCP, PIP, DIP, TIP (TIP always 0).
  std::array<int, 4> dof{};
  std::array<AngleLimit, kDhRowsPerFinger> limits{};

  /// Number of DH transforms applied for the given joint (0 for the MCP itself).
  int n_dh(JointType k) const;
  /// DH row (0-based) that carries bone n (0: MCP->PIP, 1: PIP->DIP, 2: DIP->TIP).
  int bone_row(int n) const { return n_dh(static_cast<JointType>(static_cast<int>(JointType::PIP) + n)) - 1; }
};

struct AngleLimits {
  std::array<double, kNumAngles> low{};
  std::array<double, kNumAngles> up{};
};

struct KinematicTopology {
  std::array<FingerChain, kNumFingers> fingers{};
  /// Sum of the 20 reference bone lengths (15 finger bones + 5 base-vector magnitudes), mm.
  double reference_length_sum_mm = 1.0;

  const FingerChain& chain(Finger f) const { return fingers[static_cast<int>(f)]; }
  AngleLimits angle_limits() const;

  /// Checks DoF totals, limit ordering and finiteness; throws std::invalid_argument.
  void validate() const;

  /// Built-in table, identical to config/topology.json.
  static KinematicTopology default_topology();
  static KinematicTopology from_json(const nlohmann::json& j);
  static KinematicTopology load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
};

}  // namespace handkin
