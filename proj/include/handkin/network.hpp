#pragma once

#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "handkin/depth.hpp"

namespace handkin {

struct ConvStage {
  int features = 8;
  int kernel = 5;  // valid convolution, stride 1
  int pool = 4;    // non-overlapping max pooling, remainder rows/cols dropped
  bool operator==(const ConvStage&) const = default;
};

/// Feed-forward regressor on a square single-channel raster: conv+ReLU+maxpool
/// stages, ReLU fully-connected layers, linear output.
struct NetworkSpec {
  int input_size = 64;
  std::vector<ConvStage> conv{{8, 5, 4}, {16, 5, 4}};
  std::vector<int> fc{512};
  int output = kNumParams;

  /// Throws std::invalid_argument if a stage shrinks the map below 1 pixel.
  void validate() const;
  std::size_t num_params() const;
  std::size_t input_dim() const { return static_cast<std::size_t>(input_size) * static_cast<std::size_t>(input_size); }
  nlohmann::json to_json() const;
  static NetworkSpec from_json(const nlohmann::json& j);
  bool operator==(const NetworkSpec&) const = default;
};

/// Rows are samples, columns are row-major pixels.
using Batch = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Weights ~ U(-2/sqrt(m), 2/sqrt(m)) with m the inputs of the unit; biases 0.
Eigen::VectorXd init_weights(const NetworkSpec& spec, Rng& rng);

/// Outputs, one row per sample.
Eigen::MatrixXd forward(const Eigen::VectorXd& params, const NetworkSpec& spec, const Batch& x);

/// Gradient of sum_i upstream_i . out_i with respect to the parameters.
Eigen::VectorXd backward(const Eigen::VectorXd& params, const NetworkSpec& spec, const Batch& x,
                         const Eigen::MatrixXd& upstream);

/// Per-sample loss: given (row index, network output) returns (loss, d loss / d output).
using SampleLoss = std::function<std::pair<double, Eigen::VectorXd>(std::size_t, const Eigen::VectorXd&)>;

/// Sum of per-sample losses and their parameter gradient. Samples are processed
/// in fixed chunks and reduced in order, so results do not depend on the worker count.
std::pair<double, Eigen::VectorXd> loss_and_gradient(const Eigen::VectorXd& params, const NetworkSpec& spec,
                                                     const Batch& x, const SampleLoss& loss);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long long step = 0;

  static AdamState zeros(Eigen::Index n) { return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n), 0}; }
};

/// One bias-corrected Adam update in place.
void adam_step(Eigen::VectorXd& params, const Eigen::VectorXd& grads, AdamState& state, const AdamConfig& config);

}  // namespace handkin
