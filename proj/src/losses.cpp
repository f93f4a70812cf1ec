#include "handkin/losses.hpp"

#include <cmath>
#include <numbers>

namespace handkin {

namespace {

void check_batches(std::span<const JointSet> a, std::span<const JointSet> b, const char* who) {
  if (a.size() != b.size()) throw std::invalid_argument(std::string(who) + ": batch size mismatch");
}

constexpr double kRadToDeg = 180.0 / std::numbers::pi;

}  // namespace

double joint_loss(std::span<const JointSet> estimates, std::span<const JointSet> targets) {
  check_batches(estimates, targets, "joint_loss");
  double sum = 0.0;
  for (std::size_t b = 0; b < estimates.size(); ++b) {
    for (int j = 0; j < kNumJoints; ++j) sum += (estimates[b][j] - targets[b][j]).squaredNorm();
  }
  return 0.5 * sum;
}

double constraint_loss(std::span<const AngleVector> angles, const AngleLimits& limits) {
  double sum = 0.0;
  for (const auto& theta : angles) {
    for (int a = 0; a < kNumAngles; ++a) {
      const double lo = std::min(theta[a] - limits.low[a], 0.0);
      const double hi = std::max(theta[a] - limits.up[a], 0.0);
      sum += lo * lo + hi * hi;
    }
  }
  return sum;
}

AngleVector constraint_loss_gradient(const AngleVector& angles, const AngleLimits& limits) {
  AngleVector g{};
  for (int a = 0; a < kNumAngles; ++a) {
    if (angles[a] < limits.low[a]) g[a] = 2.0 * (angles[a] - limits.low[a]);
    else if (angles[a] > limits.up[a]) g[a] = 2.0 * (angles[a] - limits.up[a]);
  }
  return g;
}

double e_joint(std::span<const JointSet> estimates, std::span<const JointSet> targets) {
  check_batches(estimates, targets, "e_joint");
  require(!estimates.empty(), "e_joint: empty batch");
  double sum = 0.0;
  for (std::size_t b = 0; b < estimates.size(); ++b) {
    for (int j = 0; j < kNumJoints; ++j) sum += (estimates[b][j] - targets[b][j]).norm();
  }
  return sum / static_cast<double>(estimates.size()) / kNumJoints;
}

ViolationStats violation_stats(std::span<const AngleVector> angles, const AngleLimits& limits) {
  require(!angles.empty(), "violation_stats: empty batch");
  std::size_t violated = 0;
  double overshoot_sum = 0.0;
  for (const auto& theta : angles) {
    for (int a = 0; a < kNumAngles; ++a) {
      double over = 0.0;
      if (theta[a] < limits.low[a]) over = limits.low[a] - theta[a];
      else if (theta[a] > limits.up[a]) over = theta[a] - limits.up[a];
      if (over > 0.0) {
        ++violated;
        overshoot_sum += over;
      }
    }
  }
  const double total = static_cast<double>(angles.size()) * kNumAngles;
  ViolationStats s;
  s.violated_fraction = static_cast<double>(violated) / total;
  if (violated > 0) {
    s.avg_violation_given_violation_deg = overshoot_sum * kRadToDeg / static_cast<double>(violated);
    s.avg_violation_total_deg = overshoot_sum * kRadToDeg / total;
  }
  return s;
}

nlohmann::json metrics_report(double e_joint_mm, const ViolationStats& stats) {
  return {{"e_joint_mm", e_joint_mm},
          {"violated_fraction", stats.violated_fraction},
          {"avg_violation_deg", stats.avg_violation_given_violation_deg},
          {"avg_violation_total_deg", stats.avg_violation_total_deg}};
}

}  // namespace handkin
