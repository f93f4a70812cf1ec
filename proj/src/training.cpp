#include "handkin/training.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include "handkin/dataset_io.hpp"
#include "handkin/dual.hpp"
#include "handkin/kinematics.hpp"
#include "handkin/normalization.hpp"
#include "handkin/parallel.hpp"

namespace handkin {

namespace {

constexpr std::uint64_t kTagInit = 101;
constexpr std::uint64_t kTagShuffle = 102;
constexpr std::uint64_t kTagAugment = 103;
constexpr std::uint64_t kPoseStream = 0;
constexpr Eigen::Index kEvalBatch = 256;
constexpr double kMinOutputScale = 1e-3;

JointSet fk_values(const ParamVector& lam, const KinematicTopology& topo) {
  const auto pts = detail::fkine_generic<double>(lam.data(), topo);
  JointSet j;
  for (int k = 0; k < kNumJoints; ++k) {
    const auto& p = pts[static_cast<std::size_t>(k)];
    j[k] = Vec3(p[0], p[1], p[2]);
  }
  return j;
}

// Joints and their Jacobian in one forward-mode pass; no positivity checks, so
// transient network outputs with odd shapes still train.
JointSet fk_jacobian(const ParamVector& lam, const KinematicTopology& topo,
                     Eigen::Matrix<double, 3 * kNumJoints, kNumParams>& jac) {
  using D = Dual<kNumParams>;
  std::array<D, kNumParams> x;
  for (int p = 0; p < kNumParams; ++p) x[static_cast<std::size_t>(p)] = D(lam[static_cast<std::size_t>(p)], p);
  const auto pts = detail::fkine_generic<D>(x.data(), topo);
  JointSet j;
  for (int k = 0; k < kNumJoints; ++k) {
    for (int c = 0; c < 3; ++c) {
      const D& v = pts[static_cast<std::size_t>(k)][static_cast<std::size_t>(c)];
      j[k][c] = v.v;
      for (int p = 0; p < kNumParams; ++p) jac(3 * k + c, p) = v.d[static_cast<std::size_t>(p)];
    }
  }
  return j;
}

ParamVector lambda_from_values(const Model& model, const Eigen::VectorXd& values) {
  ParamVector lam{};
  if (model.mode == PoseMode::VariableHand) {
    for (int p = 0; p < kNumParams; ++p) lam[static_cast<std::size_t>(p)] = values[p];
  } else {
    lam = model.fixed_shape.flatten();
    for (int p = 0; p < 6; ++p) lam[static_cast<std::size_t>(p)] = values[p];
    for (int a = 0; a < kNumAngles; ++a) lam[static_cast<std::size_t>(param_layout::kJointAngles + a)] = values[6 + a];
  }
  return lam;
}

Eigen::VectorXd mean_of(const Eigen::MatrixXd& rows) { return rows.colwise().mean().transpose(); }

Eigen::VectorXd std_of(const Eigen::MatrixXd& rows, const Eigen::VectorXd& mean) {
  Eigen::VectorXd s(rows.cols());
  for (Eigen::Index c = 0; c < rows.cols(); ++c) {
    const double var = (rows.col(c).array() - mean[c]).square().mean();
    s[c] = std::max(std::sqrt(var), kMinOutputScale);
  }
  return s;
}

std::vector<std::size_t> shuffled(std::size_t n, std::uint64_t seed, std::uint64_t stream, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, stream * 1000003ull + static_cast<std::uint64_t>(epoch), kTagShuffle);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

Eigen::MatrixXd predict_all(const Model& model, std::span<const std::vector<float>> inputs) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(inputs.size()), model.spec.output);
  for (std::size_t start = 0; start < inputs.size(); start += kEvalBatch) {
    std::vector<std::size_t> rows;
    for (std::size_t i = start; i < std::min(inputs.size(), start + kEvalBatch); ++i) rows.push_back(i);
    out.middleRows(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(rows.size())) =
        model.predict(make_batch(inputs, rows));
  }
  return out;
}

std::vector<std::vector<float>> pose_inputs(std::span<const PoseSample> samples) {
  std::vector<std::vector<float>> in;
  in.reserve(samples.size());
  for (const auto& s : samples) in.push_back(s.input);
  return in;
}

}  // namespace

std::string to_string(PoseMode mode) {
  switch (mode) {
    case PoseMode::VariableHand: return "variable_hand";
    case PoseMode::FixedHand: return "fixed_hand";
    case PoseMode::Direct: return "direct";
  }
  return "unknown";
}

PoseMode parse_pose_mode(std::string_view name) {
  if (name == "variable_hand") return PoseMode::VariableHand;
  if (name == "fixed_hand") return PoseMode::FixedHand;
  if (name == "direct") return PoseMode::Direct;
  throw std::invalid_argument("unknown mode '" + std::string(name) + "' (variable_hand, fixed_hand, direct)");
}

int output_width(PoseMode mode) {
  switch (mode) {
    case PoseMode::VariableHand: return kNumParams;
    case PoseMode::FixedHand: return 6 + kNumAngles;
    case PoseMode::Direct: return 3 * kNumJoints;
  }
  return 0;
}

void TrainConfig::validate() const {
  require(std::isfinite(learning_rate) && learning_rate > 0.0, "train config: learning rate must be > 0");
  require(batch_size >= 1, "train config: batch size must be >= 1");
  require(epochs >= 0, "train config: epochs must be >= 0");
  require(std::isfinite(lambda_constr) && lambda_constr >= 0.0, "train config: lambda_constr must be >= 0");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0, "train config: betas must be in [0, 1)");
  require(epsilon > 0.0, "train config: epsilon must be > 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"batch_size", batch_size}, {"epochs", epochs},
          {"lambda_constr", lambda_constr}, {"seed", seed},             {"beta1", beta1},
          {"beta2", beta2},                 {"epsilon", epsilon},   {"augment", augment}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  require(j.is_object(), "train config: expected a JSON object");
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "learning_rate") c.learning_rate = value.get<double>();
      else if (key == "batch_size") c.batch_size = value.get<int>();
      else if (key == "epochs") c.epochs = value.get<int>();
      else if (key == "lambda_constr") c.lambda_constr = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "beta1") c.beta1 = value.get<double>();
      else if (key == "beta2") c.beta2 = value.get<double>();
      else if (key == "epsilon") c.epsilon = value.get<double>();
      else if (key == "augment") c.augment = value.get<bool>();
      else throw std::invalid_argument("train config: unknown key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

Eigen::MatrixXd Model::predict(const Batch& x) const {
  Eigen::MatrixXd raw = forward(params, spec, x);
  for (Eigen::Index r = 0; r < raw.rows(); ++r) {
    raw.row(r) = (out_offset.array() + out_scale.array() * raw.row(r).transpose().array()).transpose();
  }
  return raw;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model) {
  nlohmann::json h;
  h["format"] = "HKCK1";
  h["kind"] = model.kind;
  h["mode"] = to_string(model.mode);
  h["spec"] = model.spec.to_json();
  h["seed"] = model.seed;
  h["epoch"] = model.epoch;
  h["param_count"] = model.params.size();
  h["out_offset"] = std::vector<double>(model.out_offset.data(), model.out_offset.data() + model.out_offset.size());
  h["out_scale"] = std::vector<double>(model.out_scale.data(), model.out_scale.data() + model.out_scale.size());
  const auto shape = model.fixed_shape.flatten();
  h["fixed_shape"] = std::vector<double>(shape.begin(), shape.end());
  std::string buf = h.dump() + "\n";
  buf.reserve(buf.size() + 8 * static_cast<std::size_t>(model.params.size()));
  for (Eigen::Index i = 0; i < model.params.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(model.params[i]);
    for (int b = 0; b < 8; ++b) buf.push_back(static_cast<char>((bits >> (8 * b)) & 0xffu));
  }
  write_file(path, buf);
}

Model load_checkpoint(const std::filesystem::path& path) {
  const std::string buf = read_file(path);
  const auto eol = buf.find('\n');
  if (eol == std::string::npos) throw IoError("not a checkpoint: " + path.string());
  Model m;
  try {
    const auto h = nlohmann::json::parse(buf.substr(0, eol));
    if (h.at("format") != "HKCK1") throw IoError("not a checkpoint: " + path.string());
    m.kind = h.at("kind").get<std::string>();
    m.mode = parse_pose_mode(h.at("mode").get<std::string>());
    m.spec = NetworkSpec::from_json(h.at("spec"));
    m.seed = h.at("seed").get<std::uint64_t>();
    m.epoch = h.at("epoch").get<int>();
    const auto off = h.at("out_offset").get<std::vector<double>>();
    const auto sc = h.at("out_scale").get<std::vector<double>>();
    const auto shape = h.at("fixed_shape").get<std::vector<double>>();
    if (off.size() != static_cast<std::size_t>(m.spec.output) || sc.size() != off.size() ||
        shape.size() != static_cast<std::size_t>(kNumParams)) {
      throw IoError("inconsistent checkpoint header: " + path.string());
    }
    m.out_offset = Eigen::Map<const Eigen::VectorXd>(off.data(), static_cast<Eigen::Index>(off.size()));
    m.out_scale = Eigen::Map<const Eigen::VectorXd>(sc.data(), static_cast<Eigen::Index>(sc.size()));
    m.fixed_shape = HandParameters::unflatten(std::span<const double, kNumParams>(shape.data(), kNumParams));
    const auto n = h.at("param_count").get<std::size_t>();
    if (n != m.spec.num_params() || buf.size() != eol + 1 + 8 * n) {
      throw IoError("truncated checkpoint: " + path.string());
    }
    m.params.resize(static_cast<Eigen::Index>(n));
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + eol + 1);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint64_t bits = 0;
      for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(p[8 * i + static_cast<std::size_t>(b)]) << (8 * b);
      m.params[static_cast<Eigen::Index>(i)] = std::bit_cast<double>(bits);
    }
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint header " + path.string() + ": " + e.what());
  }
  return m;
}

std::vector<float> network_input(const Raster& image, int input_size) {
  require(input_size >= 1 && image.width == image.height && image.width % input_size == 0,
          "network_input: raster must be square and a multiple of the input size");
  const int factor = image.width / input_size;
  return factor == 1 ? image.data : downsample(image, factor).data;
}

Batch make_batch(std::span<const std::vector<float>> inputs, std::span<const std::size_t> rows) {
  require(!rows.empty(), "make_batch: empty batch");
  const std::size_t dim = inputs[rows[0]].size();
  Batch x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& in = inputs[rows[r]];
    require(in.size() == dim, "make_batch: inputs differ in size");
    for (std::size_t c = 0; c < dim; ++c) x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = in[c];
  }
  return x;
}

std::vector<PoseSample> make_pose_samples(std::span<const ProcessedSample> samples, const PipelineConfig& config,
                                          const KinematicTopology& topo, int input_size) {
  std::vector<PoseSample> out(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const ProcessedSample& s = samples[i];
    const NormalizedImage n = normalize_image(s, gt_transform_params(s.joints_gt, topo), config);
    PoseSample& p = out[i];
    p.id = s.id;
    p.input = network_input(n.image, input_size);
    p.state = n.state;
    p.joints = s.joints_gt;
    p.joints_norm = normalize_joints(s.joints_gt, n.state);
    if (s.params_gt) p.params_norm = normalize_params(*s.params_gt, n.state);
  }
  return out;
}

HandParameters decode_params(const Model& model, const Eigen::VectorXd& values) {
  require(model.mode != PoseMode::Direct, "decode_params: direct models output joints");
  require(values.size() == output_width(model.mode), "decode_params: wrong output width");
  const ParamVector lam = lambda_from_values(model, values);
  return HandParameters::unflatten(lam);
}

Model init_posenet(std::span<const PoseSample> train, const NetworkSpec& spec, PoseMode mode,
                   const TrainConfig& config) {
  require(!train.empty(), "train_posenet: empty training set");
  if (spec.output != output_width(mode)) {
    throw std::invalid_argument("train_posenet: mode " + to_string(mode) + " needs output width " +
                                std::to_string(output_width(mode)) + ", spec has " + std::to_string(spec.output));
  }
  config.validate();
  spec.validate();
  Model m;
  m.kind = "posenet";
  m.mode = mode;
  m.spec = spec;
  m.seed = config.seed;
  Rng rng = make_rng(config.seed, kPoseStream, kTagInit);
  m.params = init_weights(spec, rng);

  const auto n = static_cast<Eigen::Index>(train.size());
  Eigen::MatrixXd targets(n, spec.output);
  for (Eigen::Index i = 0; i < n; ++i) {
    const PoseSample& s = train[static_cast<std::size_t>(i)];
    if (mode == PoseMode::Direct) {
      const auto flat = s.joints_norm.flatten();
      for (int c = 0; c < 3 * kNumJoints; ++c) targets(i, c) = flat[static_cast<std::size_t>(c)];
      continue;
    }
    if (!s.params_norm) throw std::invalid_argument("train_posenet: sample " + s.id + " has no hand parameters");
    const auto lam = s.params_norm->flatten();
    if (mode == PoseMode::VariableHand) {
      for (int p = 0; p < kNumParams; ++p) targets(i, p) = lam[static_cast<std::size_t>(p)];
    } else {
      for (int p = 0; p < 6; ++p) targets(i, p) = lam[static_cast<std::size_t>(p)];
      for (int a = 0; a < kNumAngles; ++a) targets(i, 6 + a) = lam[static_cast<std::size_t>(param_layout::kJointAngles + a)];
    }
  }
  m.out_offset = mean_of(targets);
  m.out_scale = std_of(targets, m.out_offset);
  if (mode == PoseMode::FixedHand) {
    ParamVector mean{};
    for (const auto& s : train) {
      const auto lam = s.params_norm->flatten();
      for (int p = 0; p < kNumParams; ++p) mean[static_cast<std::size_t>(p)] += lam[static_cast<std::size_t>(p)];
    }
    for (double& x : mean) x /= static_cast<double>(train.size());
    m.fixed_shape = HandParameters::unflatten(mean);
    m.fixed_shape.base_translation = {};
    m.fixed_shape.base_orientation = {};
    m.fixed_shape.joint_angles = {};
  }
  return m;
}

std::pair<double, Eigen::VectorXd> posenet_loss_and_gradient(const Model& model, std::span<const PoseSample> samples,
                                                             double lambda_constr, const KinematicTopology& topo) {
  require(!samples.empty(), "posenet loss: empty batch");
  const AngleLimits limits = topo.angle_limits();
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  std::vector<std::vector<float>> inputs;
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    inputs.push_back(samples[i].input);
    rows.push_back(i);
  }
  const Batch x = make_batch(inputs, rows);
  auto loss = [&](std::size_t i, const Eigen::VectorXd& raw) {
    const Eigen::VectorXd values = model.out_offset.array() + model.out_scale.array() * raw.array();
    const JointSet& target = samples[i].joints_norm;
    Eigen::VectorXd dvalues(values.size());
    double l = 0.0;
    if (model.mode == PoseMode::Direct) {
      for (int j = 0; j < kNumJoints; ++j) {
        const Vec3 r = values.segment<3>(3 * j) - target[j];
        l += 0.5 * r.squaredNorm();
        dvalues.segment<3>(3 * j) = r;
      }
    } else {
      const ParamVector lam = lambda_from_values(model, values);
      Eigen::Matrix<double, 3 * kNumJoints, kNumParams> jac;
      const JointSet est = fk_jacobian(lam, topo, jac);
      Eigen::Matrix<double, 3 * kNumJoints, 1> r;
      for (int j = 0; j < kNumJoints; ++j) r.segment<3>(3 * j) = est[j] - target[j];
      l = 0.5 * r.squaredNorm();
      Eigen::Matrix<double, kNumParams, 1> dlam = jac.transpose() * r;
      if (lambda_constr > 0.0) {
        AngleVector angles{};
        std::copy_n(lam.begin() + param_layout::kJointAngles, kNumAngles, angles.begin());
        const std::array<AngleVector, 1> one{angles};
        l += lambda_constr * constraint_loss(one, limits);
        const AngleVector g = constraint_loss_gradient(angles, limits);
        for (int a = 0; a < kNumAngles; ++a) dlam[param_layout::kJointAngles + a] += lambda_constr * g[static_cast<std::size_t>(a)];
      }
      if (model.mode == PoseMode::VariableHand) {
        dvalues = dlam;
      } else {
        dvalues.head<6>() = dlam.head<6>();
        dvalues.tail<kNumAngles>() = dlam.tail<kNumAngles>();
      }
    }
    return std::pair<double, Eigen::VectorXd>{l * inv_n, (model.out_scale.array() * dvalues.array()).matrix() * inv_n};
  };
  return loss_and_gradient(model.params, model.spec, x, loss);
}

PoseEvaluation evaluate_posenet(const Model& model, std::span<const PoseSample> samples,
                                const KinematicTopology& topo) {
  require(!samples.empty(), "evaluate_posenet: empty sample set");
  if (model.kind != "posenet") throw std::invalid_argument("evaluate_posenet: checkpoint is a " + model.kind + ", not a posenet");
  const Eigen::MatrixXd values = predict_all(model, pose_inputs(samples));
  PoseEvaluation ev;
  std::vector<JointSet> truth;
  bool have_angles = true;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const PoseSample& s = samples[i];
    const Eigen::VectorXd v = values.row(static_cast<Eigen::Index>(i)).transpose();
    JointSet norm;
    AngleVector angles{};
    if (model.mode == PoseMode::Direct) {
      norm = JointSet::unflatten(std::span<const double, 3 * kNumJoints>(v.data(), 3 * kNumJoints));
      if (s.params_norm) {
        angles = ik_angles(norm, *s.params_norm, topo).angles;
      } else {
        have_angles = false;
      }
    } else {
      const ParamVector lam = lambda_from_values(model, v);
      norm = fk_values(lam, topo);
      std::copy_n(lam.begin() + param_layout::kJointAngles, kNumAngles, angles.begin());
    }
    ev.estimates.push_back(back_transform(norm, s.state));
    ev.angles.push_back(angles);
    truth.push_back(s.joints);
  }
  ev.e_joint_mm = e_joint(ev.estimates, truth);
  if (have_angles) {
    ev.violations = violation_stats(ev.angles, topo.angle_limits());
  } else {
    ev.angles.clear();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    ev.violations = {nan, nan, nan};
  }
  return ev;
}

PoseTrainResult train_posenet(std::span<const PoseSample> train, const NetworkSpec& spec, const TrainConfig& config,
                              PoseMode mode, const KinematicTopology& topo, const EpochCallback& progress) {
  PoseTrainResult res{init_posenet(train, spec, mode, config), {}};
  Model& m = res.model;
  AdamState adam = AdamState::zeros(m.params.size());
  const auto bs = static_cast<std::size_t>(config.batch_size);
  std::vector<PoseSample> batch;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto order = shuffled(train.size(), config.seed, kPoseStream, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      batch.clear();
      for (std::size_t k = start; k < std::min(order.size(), start + bs); ++k) batch.push_back(train[order[k]]);
      const auto [loss, grad] = posenet_loss_and_gradient(m, batch, config.lambda_constr, topo);
      adam_step(m.params, grad, adam, config.adam());
      loss_sum += loss;
      ++batches;
    }
    m.epoch = epoch;
    const PoseEvaluation ev = evaluate_posenet(m, train, topo);
    EpochStats st{epoch, loss_sum / static_cast<double>(batches), ev.e_joint_mm, ev.violations};
    res.history.push_back(st);
    if (progress) progress(st);
  }
  return res;
}

std::string history_csv(std::span<const EpochStats> history) {
  std::string out = "epoch,loss,e_joint_mm,violated_fraction\n";
  for (const auto& h : history) {
    out += std::to_string(h.epoch) + "," + fmt(h.loss) + "," + fmt(h.e_joint_mm) + "," +
           fmt(h.violations.violated_fraction) + "\n";
  }
  return out;
}

double wrapped_angle_loss(double estimate, double target) {
  const double d = wrap_angle(estimate - target);
  return 0.5 * d * d;
}

RegressorResult train_regressor(const RegressorData& data, const NetworkSpec& spec, const TrainConfig& config,
                                const std::string& kind, bool wrap_angles, std::uint64_t stream,
                                const EpochData& epoch_data) {
  config.validate();
  spec.validate();
  require(!data.inputs.empty() && static_cast<std::size_t>(data.targets.rows()) == data.inputs.size(),
          "train_regressor: inputs and targets must be non-empty and aligned");
  require(data.targets.cols() == spec.output, "train_regressor: target width must match the output width");
  require(!wrap_angles || spec.output == 1, "train_regressor: angle regression has a single output");
  RegressorResult res;
  Model& m = res.model;
  m.kind = kind;
  m.spec = spec;
  m.seed = config.seed;
  Rng rng = make_rng(config.seed, stream, kTagInit);
  m.params = init_weights(spec, rng);
  if (wrap_angles) {
    m.out_offset = Eigen::VectorXd::Zero(1);
    m.out_scale = Eigen::VectorXd::Ones(1);
  } else {
    m.out_offset = mean_of(data.targets);
    m.out_scale = std_of(data.targets, m.out_offset);
  }
  AdamState adam = AdamState::zeros(m.params.size());
  const auto bs = static_cast<std::size_t>(config.batch_size);
  RegressorData fresh;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    if (epoch_data) {
      fresh = epoch_data(epoch);
      require(fresh.inputs.size() == data.inputs.size() && fresh.targets.cols() == data.targets.cols(),
              "train_regressor: epoch data must match the initial data shape");
    }
    const RegressorData& d = epoch_data ? fresh : data;
    const auto order = shuffled(d.inputs.size(), config.seed, stream, epoch);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::span<const std::size_t> rows(order.data() + start, std::min(bs, order.size() - start));
      const Batch x = make_batch(d.inputs, rows);
      const double inv_n = 1.0 / static_cast<double>(rows.size());
      auto loss = [&](std::size_t i, const Eigen::VectorXd& raw) {
        const Eigen::VectorXd v = m.out_offset.array() + m.out_scale.array() * raw.array();
        Eigen::VectorXd r = v - d.targets.row(static_cast<Eigen::Index>(rows[i])).transpose();
        if (wrap_angles) r[0] = wrap_angle(r[0]);
        return std::pair<double, Eigen::VectorXd>{0.5 * r.squaredNorm() * inv_n,
                                                  (m.out_scale.array() * r.array()).matrix() * inv_n};
      };
      const auto [l, grad] = loss_and_gradient(m.params, spec, x, loss);
      adam_step(m.params, grad, adam, config.adam());
      loss_sum += l;
      ++batches;
    }
    m.epoch = epoch;
    EpochStats st;
    st.epoch = epoch;
    st.loss = loss_sum / static_cast<double>(batches);
    res.history.push_back(st);
  }
  return res;
}

nlohmann::json CascadeSpecs::to_json() const {
  return {{"box", box.to_json()}, {"rot", rot.to_json()}, {"scale", scale.to_json()}};
}

CascadeSpecs CascadeSpecs::from_json(const nlohmann::json& j) {
  CascadeSpecs s;
  if (j.contains("box")) s.box = NetworkSpec::from_json(j.at("box"));
  if (j.contains("rot")) s.rot = NetworkSpec::from_json(j.at("rot"));
  if (j.contains("scale")) s.scale = NetworkSpec::from_json(j.at("scale"));
  require(s.box.output == 3 && s.rot.output == 1 && s.scale.output == 1,
          "cascade specs: output widths must be 3 (box), 1 (rot), 1 (scale)");
  return s;
}

std::vector<TransformParams> cascade_targets(std::span<const ProcessedSample> samples, const KinematicTopology& topo) {
  std::vector<TransformParams> out;
  out.reserve(samples.size());
  for (const auto& s : samples) {
    if (!s.joints_gt.all_finite()) {
      throw std::invalid_argument("cascade: sample " + s.id + " has no ground-truth joints");
    }
    out.push_back(gt_transform_params(s.joints_gt, topo));
  }
  return out;
}

RegressorData box_inputs(std::span<const ProcessedSample> samples, std::span<const TransformParams> gt,
                         int input_size) {
  RegressorData d;
  d.targets.resize(static_cast<Eigen::Index>(samples.size()), 3);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    d.inputs.push_back(network_input(samples[i].image, input_size));
    d.targets.row(static_cast<Eigen::Index>(i)) = gt[i].t.transpose();
  }
  return d;
}

RegressorData rot_inputs(std::span<const ProcessedSample> samples, std::span<const TransformParams> gt,
                         std::span<const Vec3> t_est, const PipelineConfig& config, int input_size) {
  RegressorData d;
  d.targets.resize(static_cast<Eigen::Index>(samples.size()), 1);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const CropResult crop = crop_recenter_raster(samples[i].image, t_est[i], config);
    d.inputs.push_back(network_input(crop.image, input_size));
    d.targets(static_cast<Eigen::Index>(i), 0) = gt[i].alpha_z;
  }
  return d;
}

RegressorData scale_inputs(std::span<const ProcessedSample> samples, std::span<const TransformParams> gt,
                           std::span<const Vec3> t_est, std::span<const double> alpha_est,
                           const PipelineConfig& config, int input_size) {
  RegressorData d;
  d.targets.resize(static_cast<Eigen::Index>(samples.size()), 1);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const CropResult crop = crop_recenter_raster(samples[i].image, t_est[i], config);
    d.inputs.push_back(network_input(rotate_raster(crop.image, alpha_est[i]), input_size));
    d.targets(static_cast<Eigen::Index>(i), 0) = gt[i].s;
  }
  return d;
}

nlohmann::json CascadeResult::report() const {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : stages) {
    nlohmann::json h = nlohmann::json::array();
    for (const auto& e : s.history) h.push_back({{"epoch", e.epoch}, {"loss", e.loss}});
    j.push_back({{"stage", s.stage}, {"validation_error", s.validation_error}, {"history", h}});
  }
  return j;
}

namespace {

std::vector<Vec3> predict_t(const Model& box, const RegressorData& d) {
  const Eigen::MatrixXd v = predict_all(box, d.inputs);
  std::vector<Vec3> out;
  for (Eigen::Index i = 0; i < v.rows(); ++i) out.emplace_back(v(i, 0), v(i, 1), v(i, 2));
  return out;
}

std::vector<double> predict_scalar(const Model& m, const RegressorData& d) {
  const Eigen::MatrixXd v = predict_all(m, d.inputs);
  return std::vector<double>(v.data(), v.data() + v.size());
}

using StageBuilder = std::function<RegressorData(std::span<const ProcessedSample>, std::span<const TransformParams>)>;

// One epoch of augmented training data. Built in chunks so only a slice of
// augmented images is alive at a time; each sample has its own stream.
RegressorData augmented_epoch(std::span<const ProcessedSample> train, const TrainConfig& config,
                              const PipelineConfig& pipeline, const KinematicTopology& topo, std::uint64_t stream,
                              int epoch, const StageBuilder& build) {
  constexpr std::size_t kChunk = 256;
  RegressorData out;
  std::vector<Eigen::MatrixXd> targets;
  for (std::size_t start = 0; start < train.size(); start += kChunk) {
    const std::size_t n = std::min(kChunk, train.size() - start);
    std::vector<ProcessedSample> chunk(n);
    parallel_for(n, [&](std::size_t k) {
      const std::uint64_t id = (stream * 1000003ull + static_cast<std::uint64_t>(epoch)) * 1000003ull + start + k;
      Rng rng = make_rng(config.seed, id, kTagAugment);
      chunk[k] = augment(train[start + k], rng, pipeline);
    });
    RegressorData part = build(chunk, cascade_targets(chunk, topo));
    for (auto& x : part.inputs) out.inputs.push_back(std::move(x));
    targets.push_back(std::move(part.targets));
  }
  out.targets.resize(static_cast<Eigen::Index>(out.inputs.size()), targets.front().cols());
  Eigen::Index row = 0;
  for (const auto& t : targets) {
    out.targets.middleRows(row, t.rows()) = t;
    row += t.rows();
  }
  return out;
}

double mean_angle_error_deg(std::span<const double> est, const Eigen::MatrixXd& targets) {
  double sum = 0.0;
  for (std::size_t i = 0; i < est.size(); ++i) {
    sum += std::abs(wrap_angle(est[i] - targets(static_cast<Eigen::Index>(i), 0)));
  }
  return sum / static_cast<double>(est.size()) * 180.0 / std::numbers::pi;
}

}  // namespace

CascadeResult train_cascade(std::span<const ProcessedSample> train, std::span<const ProcessedSample> validation,
                            const CascadeSpecs& specs, const TrainConfig& config, const PipelineConfig& pipeline,
                            const KinematicTopology& topo, int stages) {
  require(stages >= 1 && stages <= 3, "train_cascade: stages must be 1, 2 or 3");
  require(!train.empty() && !validation.empty(), "train_cascade: empty training or validation set");
  const auto gt_train = cascade_targets(train, topo);
  const auto gt_val = cascade_targets(validation, topo);
  CascadeResult res;

  // Epoch data for a stage: augmented copies when enabled, else the fixed inputs.
  auto epochs_of = [&](std::uint64_t stream, StageBuilder build) -> EpochData {
    if (!config.augment) return {};
    return [&, stream, build](int epoch) {
      return augmented_epoch(train, config, pipeline, topo, stream, epoch, build);
    };
  };

  const RegressorData box_train = box_inputs(train, gt_train, specs.box.input_size);
  const RegressorData box_val = box_inputs(validation, gt_val, specs.box.input_size);
  RegressorResult box = train_regressor(
      box_train, specs.box, config, "boxnet", false, 1,
      epochs_of(1, [&](auto s, auto gt) { return box_inputs(s, gt, specs.box.input_size); }));
  const auto t_train = predict_t(box.model, box_train);
  const auto t_val = predict_t(box.model, box_val);
  double err = 0.0;
  for (std::size_t i = 0; i < t_val.size(); ++i) err += (t_val[i] - gt_val[i].t).norm();
  res.stages.push_back({"box", err / static_cast<double>(t_val.size()), box.history});
  res.models.push_back(box.model);
  if (stages == 1) return res;

  const RegressorData rot_train = rot_inputs(train, gt_train, t_train, pipeline, specs.rot.input_size);
  const RegressorData rot_val = rot_inputs(validation, gt_val, t_val, pipeline, specs.rot.input_size);
  RegressorResult rot = train_regressor(
      rot_train, specs.rot, config, "rotnet", true, 2, epochs_of(2, [&](auto s, auto gt) {
        const auto t = predict_t(box.model, box_inputs(s, gt, specs.box.input_size));
        return rot_inputs(s, gt, t, pipeline, specs.rot.input_size);
      }));
  const auto a_train = predict_scalar(rot.model, rot_train);
  const auto a_val = predict_scalar(rot.model, rot_val);
  res.stages.push_back({"rot", mean_angle_error_deg(a_val, rot_val.targets), rot.history});
  res.models.push_back(rot.model);
  if (stages == 2) return res;

  const RegressorData sc_train = scale_inputs(train, gt_train, t_train, a_train, pipeline, specs.scale.input_size);
  const RegressorData sc_val = scale_inputs(validation, gt_val, t_val, a_val, pipeline, specs.scale.input_size);
  RegressorResult sc = train_regressor(
      sc_train, specs.scale, config, "scalenet", false, 3, epochs_of(3, [&](auto s, auto gt) {
        const auto t = predict_t(box.model, box_inputs(s, gt, specs.box.input_size));
        const auto a = predict_scalar(rot.model, rot_inputs(s, gt, t, pipeline, specs.rot.input_size));
        return scale_inputs(s, gt, t, a, pipeline, specs.scale.input_size);
      }));
  const auto s_val = predict_scalar(sc.model, sc_val);
  err = 0.0;
  for (std::size_t i = 0; i < s_val.size(); ++i) err += std::abs(s_val[i] - gt_val[i].s);
  res.stages.push_back({"scale", err / static_cast<double>(s_val.size()), sc.history});
  res.models.push_back(sc.model);
  return res;
}

StageReport train_rotnet_standalone(std::span<const ProcessedSample> train,
                                    std::span<const ProcessedSample> validation, const NetworkSpec& spec,
                                    const TrainConfig& config, const PipelineConfig& pipeline,
                                    const KinematicTopology& topo, Model* model_out) {
  const auto gt_train = cascade_targets(train, topo);
  const auto gt_val = cascade_targets(validation, topo);
  const std::vector<Vec3> zero_train(train.size(), Vec3::Zero()), zero_val(validation.size(), Vec3::Zero());
  const RegressorData rot_train = rot_inputs(train, gt_train, zero_train, pipeline, spec.input_size);
  const RegressorData rot_val = rot_inputs(validation, gt_val, zero_val, pipeline, spec.input_size);
  EpochData epochs;
  if (config.augment) {
    epochs = [&](int epoch) {
      return augmented_epoch(train, config, pipeline, topo, 2, epoch, [&](auto s, auto gt) {
        const std::vector<Vec3> zero(s.size(), Vec3::Zero());
        return rot_inputs(s, gt, zero, pipeline, spec.input_size);
      });
    };
  }
  RegressorResult rot = train_regressor(rot_train, spec, config, "rotnet", true, 2, epochs);
  const auto a_val = predict_scalar(rot.model, rot_val);
  if (model_out) *model_out = rot.model;
  return {"rot_standalone", mean_angle_error_deg(a_val, rot_val.targets), rot.history};
}

}  // namespace handkin
