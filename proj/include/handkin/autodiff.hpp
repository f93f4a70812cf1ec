#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "handkin/dual.hpp"
#include "handkin/hand_parameters.hpp"
#include "handkin/kinematics.hpp"
#include "handkin/losses.hpp"
#include "handkin/topology.hpp"

namespace handkin {

/// Single-direction forward-mode scalar.
using DifferentiableScalar = Dual<1>;

/// d(joint coordinates) / d(Lambda): 63 x 61, row = 3 * joint + coordinate,
/// column = flattened parameter index.
struct Jacobian {
  static constexpr int kRows = 3 * kNumJoints;
  static constexpr int kCols = kNumParams;
  Eigen::Matrix<double, kRows, kCols, Eigen::RowMajor> values;
  /// Joint positions from the same evaluation (bitwise equal to fkine()).
  JointSet joints;

  static std::string row_label(int row);
  static std::string col_label(int col);
};

Jacobian fkine_jacobian(const HandParameters& params, const KinematicTopology& topo);

using VectorFunction = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Central differences; column p uses step h * max(1, |x_p|). Throws
/// std::domain_error naming the column when f returns non-finite values.
Eigen::MatrixXd finite_diff_jacobian(const VectorFunction& f, const Eigen::VectorXd& x, double h = 1e-6);

/// Gradient of joint_loss + lambda_constr * constraint_loss for a single
/// sample with respect to the flattened Lambda.
ParamVector loss_gradient(const HandParameters& params, const JointSet& target, const AngleLimits& limits,
                          double lambda_constr, const KinematicTopology& topo);

/// max |a - b| / max(1, |a|, |b|) over all entries.
double max_relative_error(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b);

}  // namespace handkin
