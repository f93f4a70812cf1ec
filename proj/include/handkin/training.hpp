#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "handkin/depth.hpp"
#include "handkin/losses.hpp"
#include "handkin/network.hpp"

namespace handkin {

enum class PoseMode { VariableHand, FixedHand, Direct };

std::string to_string(PoseMode mode);
/// "variable_hand", "fixed_hand" or "direct"; throws std::invalid_argument otherwise.
PoseMode parse_pose_mode(std::string_view name);
/// 61, 31 (base pose + angles) or 63.
int output_width(PoseMode mode);

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 32;
  int epochs = 20;
  double lambda_constr = 1.0;
  std::uint64_t seed = 42;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Fresh random scale/rotation/translation of every training image each epoch.
  /// Used by the cascade stages; pose training takes its samples as given.
  bool augment = false;

  void validate() const;
  AdamConfig adam() const { return {learning_rate, beta1, beta2, epsilon}; }
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults; unknown keys are rejected.
  static TrainConfig from_json(const nlohmann::json& j);
};

/// Network plus a fixed output affine: value = out_offset + out_scale * raw.
struct Model {
  std::string kind;  // posenet, boxnet, rotnet, scalenet
  PoseMode mode = PoseMode::VariableHand;
  NetworkSpec spec;
  Eigen::VectorXd params;
  Eigen::VectorXd out_offset;
  Eigen::VectorXd out_scale;
  HandParameters fixed_shape;  // fixed_hand: normalized shape used for every sample
  std::uint64_t seed = 0;
  int epoch = 0;

  Eigen::MatrixXd predict(const Batch& x) const;
};

/// One JSON header line, then the parameters as little-endian float64.
void save_checkpoint(const std::filesystem::path& path, const Model& model);
Model load_checkpoint(const std::filesystem::path& path);

/// Network input: a raster average-pooled down to input_size, row-major.
std::vector<float> network_input(const Raster& image, int input_size);
Batch make_batch(std::span<const std::vector<float>> inputs, std::span<const std::size_t> rows);

/// One training example for the pose network: ground-truth-normalized crop.
struct PoseSample {
  std::string id;
  std::vector<float> input;
  TransformState state;  // t is the translation actually applied by the crop
  JointSet joints;       // preprocessed (COM-centred) frame
  JointSet joints_norm;
  std::optional<HandParameters> params_norm;
};

std::vector<PoseSample> make_pose_samples(std::span<const ProcessedSample> samples, const PipelineConfig& config,
                                          const KinematicTopology& topo, int input_size);

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
  double e_joint_mm = 0.0;
  ViolationStats violations;
};

struct PoseEvaluation {
  double e_joint_mm = 0.0;
  ViolationStats violations;
  std::vector<JointSet> estimates;  // preprocessed frame
  std::vector<AngleVector> angles;  // direct mode: recovered by inverse kinematics
};

/// Mean over the samples of 1/2 |fkine(params) - target|^2 + lambda * constraint penalty
/// (direct mode: 1/2 |joints - target|^2), and its gradient in the network parameters.
std::pair<double, Eigen::VectorXd> posenet_loss_and_gradient(const Model& model, std::span<const PoseSample> samples,
                                                             double lambda_constr, const KinematicTopology& topo);

/// Normalized hand parameters decoded from one output row (variable_hand / fixed_hand).
HandParameters decode_params(const Model& model, const Eigen::VectorXd& values);

/// Model with the network initialised and the output affine fitted to the training targets.
Model init_posenet(std::span<const PoseSample> train, const NetworkSpec& spec, PoseMode mode,
                   const TrainConfig& config);

using EpochCallback = std::function<void(const EpochStats&)>;

struct PoseTrainResult {
  Model model;
  std::vector<EpochStats> history;  // metrics on the training set after each epoch
};

PoseTrainResult train_posenet(std::span<const PoseSample> train, const NetworkSpec& spec, const TrainConfig& config,
                              PoseMode mode, const KinematicTopology& topo, const EpochCallback& progress = {});

PoseEvaluation evaluate_posenet(const Model& model, std::span<const PoseSample> samples,
                                const KinematicTopology& topo);

/// epoch,loss,e_joint_mm,violated_fraction
std::string history_csv(std::span<const EpochStats> history);

/// Squared-error regressor on per-sample targets; wrap_angles makes the loss
/// use the wrapped difference (single angle output).
struct RegressorData {
  std::vector<std::vector<float>> inputs;
  Eigen::MatrixXd targets;  // rows are samples
};

struct RegressorResult {
  Model model;
  std::vector<EpochStats> history;  // e_joint_mm unused (0)
};

/// Per-epoch training data (epoch counts from 1); replaces `data` after initialisation when set.
using EpochData = std::function<RegressorData(int epoch)>;

RegressorResult train_regressor(const RegressorData& data, const NetworkSpec& spec, const TrainConfig& config,
                                const std::string& kind, bool wrap_angles, std::uint64_t stream,
                                const EpochData& epoch_data = {});

/// 1/2 wrap(a - b)^2.
double wrapped_angle_loss(double estimate, double target);

struct CascadeSpecs {
  NetworkSpec box{88, {{8, 5, 4}, {16, 5, 4}}, {512}, 3};
  NetworkSpec rot{64, {{8, 5, 2}, {16, 5, 2}}, {512}, 1};
  NetworkSpec scale{64, {{8, 5, 2}, {16, 5, 2}}, {512}, 1};

  nlohmann::json to_json() const;
  static CascadeSpecs from_json(const nlohmann::json& j);
};

/// Ground-truth t, alpha_z and s per sample; throws std::invalid_argument when
/// the sample carries no ground-truth joints.
std::vector<TransformParams> cascade_targets(std::span<const ProcessedSample> samples, const KinematicTopology& topo);

/// Inputs of each stage given earlier-stage estimates.
RegressorData box_inputs(std::span<const ProcessedSample> samples, std::span<const TransformParams> gt, int input_size);
RegressorData rot_inputs(std::span<const ProcessedSample> samples, std::span<const TransformParams> gt,
                         std::span<const Vec3> t_est, const PipelineConfig& config, int input_size);
RegressorData scale_inputs(std::span<const ProcessedSample> samples, std::span<const TransformParams> gt,
                           std::span<const Vec3> t_est, std::span<const double> alpha_est,
                           const PipelineConfig& config, int input_size);

struct StageReport {
  std::string stage;
  double validation_error = 0.0;  // mm, degrees or scale units
  std::vector<EpochStats> history;
};

struct CascadeResult {
  std::vector<Model> models;  // in stage order
  std::vector<StageReport> stages;
  nlohmann::json report() const;
};

/// Trains Box, then Rot on Box-recentered crops, then Scale on recentered and
/// de-rotated crops. Earlier stages are frozen. stages limits how many run (1..3).
CascadeResult train_cascade(std::span<const ProcessedSample> train, std::span<const ProcessedSample> validation,
                            const CascadeSpecs& specs, const TrainConfig& config, const PipelineConfig& pipeline,
                            const KinematicTopology& topo, int stages = 3);

/// RotNet trained and evaluated on central crops (no translation estimate).
StageReport train_rotnet_standalone(std::span<const ProcessedSample> train,
                                    std::span<const ProcessedSample> validation, const NetworkSpec& spec,
                                    const TrainConfig& config, const PipelineConfig& pipeline,
                                    const KinematicTopology& topo, Model* model_out = nullptr);

}  // namespace handkin
