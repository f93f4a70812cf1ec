#pragma once

#include <span>

#include <nlohmann/json.hpp>

#include "handkin/hand_parameters.hpp"
#include "handkin/kinematics.hpp"
#include "handkin/topology.hpp"

namespace handkin {

/// Joint-limit violation statistics. Averages are in degrees; violations are
/// counted per angle, not per frame.
struct ViolationStats {
  double violated_fraction = 0.0;
  double avg_violation_given_violation_deg = 0.0;
  double avg_violation_total_deg = 0.0;
};

/// 1/2 * sum over batch and joints of squared Euclidean error (mm^2).
double joint_loss(std::span<const JointSet> estimates, std::span<const JointSet> targets);

/// Sum over batch of |min(theta - low, 0)|^2 + |max(theta - up, 0)|^2.
double constraint_loss(std::span<const AngleVector> angles, const AngleLimits& limits);

/// Gradient of the single-sample constraint penalty. Zero on the feasible side
/// of each limit, including exactly at the limit.
AngleVector constraint_loss_gradient(const AngleVector& angles, const AngleLimits& limits);

/// Mean per-joint Euclidean error (mm).
double e_joint(std::span<const JointSet> estimates, std::span<const JointSet> targets);

ViolationStats violation_stats(std::span<const AngleVector> angles, const AngleLimits& limits);

/// Flat metrics report: e_joint_mm, violated_fraction, avg_violation_deg, avg_violation_total_deg.
nlohmann::json metrics_report(double e_joint_mm, const ViolationStats& stats);

/// Per-finger inverse kinematics result.
struct IkResult {
  AngleVector angles{};
  /// Fitted base rotation as Z-Y-X Euler angles (rad).
  std::array<double, 3> base_orientation{};
  /// L2 norm over the 15 PIP/DIP/TIP residual vectors (mm).
  double residual_mm = 0.0;
  /// False when any finger hit max_iterations; the residual is reported either way.
  bool converged = false;
  int iterations = 0;
};

struct IkOptions {
  int max_iterations = 200;
  double initial_damping = 1e-6;
  /// Stop when the step norm (rad) or the residual (mm) falls below this.
  double tolerance = 1e-12;
};

/// Recovers the 25 joint angles from observed joints. `shape` supplies bone
/// lengths and base vectors; its pose fields are ignored. The base rotation is
/// fitted to the MCP and wrist offsets, then each finger is solved by damped
/// Gauss-Newton from the mid-limit and zero angles; the better fit wins, ties
/// going to the smaller limit overshoot. Throws DegenerateInputError on zero-length
/// observed bones.
IkResult ik_angles(const JointSet& joints, const HandParameters& shape, const KinematicTopology& topo,
                   const IkOptions& options = {});

}  // namespace handkin
