#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "handkin/autodiff.hpp"
#include "handkin/dataset_io.hpp"
#include "handkin/depth.hpp"
#include "handkin/kinematics.hpp"
#include "handkin/losses.hpp"
#include "handkin/normalization.hpp"
#include "handkin/renderer.hpp"
#include "handkin/training.hpp"

namespace fs = std::filesystem;
using namespace handkin;
using nlohmann::json;

namespace {

/// Bad flags or unreadable user input: exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::uint64_t seed = 42;
  std::string config;
  std::string topology;
  std::string out = ".";
};

struct RunLog {
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  json extra = json::object();
};

json parse_json_file(const fs::path& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw UsageError(e.what());
  }
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw UsageError("cannot parse " + path.string() + ": " + e.what());
  }
}

std::vector<double> numbers_from(const json& j, const char* key, std::size_t n, const std::string& what) {
  const json* v = &j;
  if (j.is_object()) {
    if (!j.contains(key)) throw UsageError(what + ": expected an array or an object with '" + key + "'");
    v = &j.at(key);
  }
  std::vector<double> out;
  try {
    for (const auto& x : *v) {
      if (x.is_array()) {
        for (const auto& y : x) out.push_back(y.get<double>());
      } else {
        out.push_back(x.get<double>());
      }
    }
  } catch (const json::exception&) {
    throw UsageError(what + ": values must be numbers");
  }
  if (out.size() != n) throw UsageError(what + ": expected " + std::to_string(n) + " values, got " + std::to_string(out.size()));
  return out;
}

HandParameters read_params(const fs::path& path) {
  const auto v = numbers_from(parse_json_file(path), "lambda", kNumParams, path.string());
  return HandParameters::unflatten(std::span<const double, kNumParams>(v.data(), kNumParams));
}

JointSet read_joints(const fs::path& path) {
  const auto v = numbers_from(parse_json_file(path), "joints_mm", 3 * kNumJoints, path.string());
  return JointSet::unflatten(std::span<const double, 3 * kNumJoints>(v.data(), 3 * kNumJoints));
}

json joints_json(const JointSet& j) {
  json labelled = json::object();
  for (int k = 0; k < kNumJoints; ++k) labelled[joint_label(k)] = {j[k].x(), j[k].y(), j[k].z()};
  const auto flat = j.flatten();
  return {{"joints", labelled}, {"joints_mm", std::vector<double>(flat.begin(), flat.end())}};
}

KinematicTopology load_topology(const Options& o) {
  return o.topology.empty() ? KinematicTopology::default_topology() : KinematicTopology::load(o.topology);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string inputs_hash(const std::vector<std::string>& inputs) {
  std::string all;
  for (const auto& p : inputs) {
    if (fs::is_regular_file(p)) all += git_file_hash(p);
    else if (fs::is_regular_file(fs::path(p) / "manifest.json")) all += git_file_hash(fs::path(p) / "manifest.json");
  }
  return git_blob_hash(all);
}

void append_run_manifest(const std::string& subcommand, const Options& o, const RunLog& log, double seconds) {
  ensure_dir(o.out);
  json m = {{"subcommand", subcommand}, {"config", o.config},    {"seed", o.seed},
            {"inputs", log.inputs},      {"input_hash", inputs_hash(log.inputs)},
            {"outputs", log.outputs},    {"duration_s", seconds}};
  if (!log.extra.empty()) m["details"] = log.extra;
  const fs::path path = fs::path(o.out) / "run_manifest.jsonl";
  std::FILE* f = std::fopen(path.c_str(), "ab");
  if (!f) throw IoError("cannot append to " + path.string());
  const std::string line = m.dump() + "\n";
  const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size();
  std::fclose(f);
  if (!ok) throw IoError("write failed: " + path.string());
}

GeneratorConfig generator_config(const json& j) {
  GeneratorConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "depth_noise_std_mm") c.depth_noise_std_mm = v.get<double>();
      else if (key == "train_fraction") c.train_fraction = v.get<double>();
      else if (key == "validation_fraction") c.validation_fraction = v.get<double>();
      else if (key == "camera") {
        c.camera.width = v.value("width", c.camera.width);
        c.camera.height = v.value("height", c.camera.height);
        c.camera.intrinsics.fx = v.value("fx", c.camera.intrinsics.fx);
        c.camera.intrinsics.fy = v.value("fy", c.camera.intrinsics.fy);
        c.camera.intrinsics.cx = v.value("cx", c.camera.intrinsics.cx);
        c.camera.intrinsics.cy = v.value("cy", c.camera.intrinsics.cy);
      } else {
        throw UsageError("gen config: unknown key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("gen config: ") + e.what());
  }
  if (c.depth_noise_std_mm < 0.0 || c.train_fraction < 0.0 || c.validation_fraction < 0.0 ||
      c.train_fraction + c.validation_fraction > 1.0) {
    throw UsageError("gen config: fractions must be in [0, 1] and noise >= 0");
  }
  if (c.camera.width <= 0 || c.camera.height <= 0) throw UsageError("gen config: camera size must be positive");
  try {
    c.camera.intrinsics.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  return c;
}

struct TrainSetup {
  TrainConfig train;
  std::optional<NetworkSpec> spec;
  bool spec_has_output = false;
  std::optional<CascadeSpecs> cascade;
  PipelineConfig pipeline;
};

TrainSetup train_setup(const Options& o) {
  TrainSetup s;
  if (o.config.empty()) return s;
  const json j = parse_json_file(o.config);
  try {
    json train = j.value("train", json::object());
    s.train = TrainConfig::from_json(train);
    if (j.contains("network")) {
      s.spec = NetworkSpec::from_json(j.at("network"));
      s.spec_has_output = j.at("network").contains("output");
    }
    if (j.contains("cascade")) s.cascade = CascadeSpecs::from_json(j.at("cascade"));
    for (const auto& [key, v] : j.items()) {
      if (key != "train" && key != "network" && key != "cascade") throw UsageError("config: unknown key '" + key + "'");
    }
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  return s;
}

Dataset open_dataset(const std::string& dir) {
  if (!fs::is_regular_file(fs::path(dir) / "manifest.json")) throw IoError("no dataset at " + dir);
  return load_dataset(dir);
}

int cmd_gen(const Options& o, std::size_t n, const std::string& profiles_path, RunLog& log) {
  const GeneratorConfig cfg = o.config.empty() ? GeneratorConfig{} : generator_config(parse_json_file(o.config));
  std::vector<HandShapeProfile> profiles;
  try {
    profiles = profiles_path.empty() ? default_profiles() : load_profiles(profiles_path);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (!profiles_path.empty()) log.inputs.push_back(profiles_path);
  const json manifest = generate_dataset(n, profiles, o.seed, o.out, load_topology(o), cfg);
  log.outputs = {(fs::path(o.out) / "manifest.json").string(), (fs::path(o.out) / "annotations.jsonl").string(),
                 (fs::path(o.out) / "frames").string()};
  log.extra = {{"checksum", manifest["checksum"]}, {"samples", n}};
  std::cout << json{{"checksum", manifest["checksum"]}, {"samples", n}, {"out", o.out}}.dump() << "\n";
  return 0;
}

int cmd_preprocess(const Options& o, const std::string& dataset, const std::string& split, bool images, RunLog& log) {
  const Dataset ds = open_dataset(dataset);
  log.inputs.push_back(dataset);
  const PipelineConfig cfg;
  const auto samples = preprocess_records(ds, split, load_topology(o), cfg);
  ensure_dir(o.out);
  std::string lines;
  int clamped = 0;
  for (const auto& s : samples) {
    const auto flat = s.joints_gt.flatten();
    json j = {{"id", s.id},
              {"state", s.state.to_json()},
              {"joints_mm", std::vector<double>(flat.begin(), flat.end())},
              {"crop_clamped", s.crop_clamped}};
    if (s.params_gt) {
      const auto lam = s.params_gt->flatten();
      j["lambda"] = std::vector<double>(lam.begin(), lam.end());
    }
    clamped += s.crop_clamped;
    lines += j.dump() + "\n";
    if (images) {
      ensure_dir(fs::path(o.out) / "images");
      write_pgm(fs::path(o.out) / "images" / (s.id + ".pgm"), s.image);
    }
  }
  write_file(fs::path(o.out) / "samples.jsonl", lines);
  log.outputs.push_back((fs::path(o.out) / "samples.jsonl").string());
  if (images) log.outputs.push_back((fs::path(o.out) / "images").string());
  std::cout << json{{"samples", samples.size()}, {"crop_clamped", clamped}}.dump() << "\n";
  return 0;
}

int cmd_augment_preview(const Options& o, const std::string& dataset, std::size_t index, int count, RunLog& log) {
  const Dataset ds = open_dataset(dataset);
  log.inputs.push_back(dataset);
  if (index >= ds.records.size()) throw UsageError("index " + std::to_string(index) + " out of range");
  Dataset one = ds;
  one.records = {ds.records[index]};
  const PipelineConfig cfg;
  const ProcessedSample s = preprocess_records(one, "", load_topology(o), cfg).front();
  ensure_dir(o.out);
  write_pgm(fs::path(o.out) / (s.id + "_orig.pgm"), s.image);
  Rng rng = make_rng(o.seed, index, 4);
  json draws = json::array();
  for (int k = 0; k < count; ++k) {
    const AugmentationDraw d = draw_augmentation(rng);
    const ProcessedSample a = augment(s, d, cfg);
    char name[64];
    std::snprintf(name, sizeof name, "%s_aug%03d.pgm", s.id.c_str(), k);
    write_pgm(fs::path(o.out) / name, a.image);
    log.outputs.push_back((fs::path(o.out) / name).string());
    draws.push_back({{"file", name},
                     {"scale", d.scale},
                     {"rotation_rad", d.rotation_rad},
                     {"translation_mm", {d.translation_mm.x(), d.translation_mm.y(), d.translation_mm.z()}}});
  }
  write_file(fs::path(o.out) / "draws.json", draws.dump(2) + "\n");
  log.outputs.push_back((fs::path(o.out) / "draws.json").string());
  std::cout << draws.dump() << "\n";
  return 0;
}

int cmd_train(const Options& o, const std::string& dataset, const std::string& model, const std::string& mode_name,
              std::optional<int> epochs, std::optional<double> lr, std::optional<double> lambda, RunLog& log) {
  TrainSetup setup = train_setup(o);
  if (!o.config.empty()) log.inputs.push_back(o.config);
  setup.train.seed = o.seed;
  if (epochs) setup.train.epochs = *epochs;
  if (lr) setup.train.learning_rate = *lr;
  if (lambda) setup.train.lambda_constr = *lambda;
  try {
    setup.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  PoseMode mode;
  try {
    mode = parse_pose_mode(mode_name);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  NetworkSpec spec = setup.spec.value_or(NetworkSpec{});
  if (!setup.spec_has_output) spec.output = output_width(mode);
  if (model == "posenet" && spec.output != output_width(mode)) {
    throw UsageError("mode " + mode_name + " needs output width " + std::to_string(output_width(mode)));
  }
  if (model == "posenet" && 128 % spec.input_size != 0) throw UsageError("network input_size must divide 128");

  const KinematicTopology topo = load_topology(o);
  const Dataset ds = open_dataset(dataset);
  log.inputs.push_back(dataset);
  ensure_dir(o.out);
  const auto train = preprocess_records(ds, "train", topo, setup.pipeline);
  if (train.empty()) throw IoError("dataset has no training samples");
  json report;
  if (model == "posenet") {
    const auto samples = make_pose_samples(train, setup.pipeline, topo, spec.input_size);
    const auto res = train_posenet(samples, spec, setup.train, mode, topo, [](const EpochStats& st) {
      std::cerr << "epoch " << st.epoch << " loss " << st.loss << " e_joint_mm " << st.e_joint_mm << "\n";
    });
    const fs::path ck = fs::path(o.out) / "posenet.hkck", csv = fs::path(o.out) / "history.csv";
    save_checkpoint(ck, res.model);
    write_file(csv, history_csv(res.history));
    log.outputs = {ck.string(), csv.string()};
    const auto& last = res.history.empty() ? EpochStats{} : res.history.back();
    report = metrics_report(last.e_joint_mm, last.violations);
    report["epochs"] = setup.train.epochs;
    report["mode"] = to_string(mode);
  } else {
    const auto val = preprocess_records(ds, "validation", topo, setup.pipeline);
    if (val.empty()) throw IoError("dataset has no validation samples");
    const CascadeSpecs specs = setup.cascade.value_or(CascadeSpecs{});
    const CascadeResult res = train_cascade(train, val, specs, setup.train, setup.pipeline, topo);
    for (const auto& m : res.models) {
      const fs::path ck = fs::path(o.out) / (m.kind + ".hkck");
      save_checkpoint(ck, m);
      log.outputs.push_back(ck.string());
    }
    report = {{"stages", res.report()}};
  }
  const fs::path rp = fs::path(o.out) / "train_report.json";
  report["config"] = setup.train.to_json();
  write_file(rp, report.dump(2) + "\n");
  log.outputs.push_back(rp.string());
  std::cout << report.dump() << "\n";
  return 0;
}

int cmd_eval(const Options& o, const std::string& checkpoint, const std::string& dataset, const std::string& split,
             RunLog& log) {
  Model m;
  try {
    m = load_checkpoint(checkpoint);
  } catch (const IoError& e) {
    throw UsageError(e.what());
  }
  if (m.kind != "posenet") throw UsageError("eval expects a posenet checkpoint, got " + m.kind);
  const KinematicTopology topo = load_topology(o);
  const Dataset ds = open_dataset(dataset);
  log.inputs = {checkpoint, dataset};
  const PipelineConfig pipeline;
  const auto processed = preprocess_records(ds, split, topo, pipeline);
  if (processed.empty()) throw IoError("split '" + split + "' is empty");
  const auto samples = make_pose_samples(processed, pipeline, topo, m.spec.input_size);
  const PoseEvaluation ev = evaluate_posenet(m, samples, topo);
  json report = metrics_report(ev.e_joint_mm, ev.violations);
  report["split"] = split;
  report["samples"] = samples.size();
  report["mode"] = to_string(m.mode);
  ensure_dir(o.out);
  const fs::path rp = fs::path(o.out) / ("eval_" + split + ".json");
  write_file(rp, report.dump(2) + "\n");
  log.outputs.push_back(rp.string());
  std::cout << report.dump() << "\n";
  return 0;
}

int cmd_fk(const Options& o, const std::string& params_path, RunLog& log) {
  const HandParameters p = read_params(params_path);
  log.inputs.push_back(params_path);
  JointSet j;
  try {
    j = fkine(p, load_topology(o));
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  std::cout << joints_json(j).dump(2) << "\n";
  return 0;
}

int cmd_ik(const Options& o, const std::string& joints_path, const std::string& shape_path, RunLog& log) {
  const JointSet j = read_joints(joints_path);
  const HandParameters shape = read_params(shape_path);
  log.inputs = {joints_path, shape_path};
  const KinematicTopology topo = load_topology(o);
  const IkResult r = ik_angles(j, shape, topo);
  HandParameters fit = shape;
  const Vec3 base = j.at(Finger::M, JointType::MCP);
  fit.base_translation = {base.x(), base.y(), base.z()};
  fit.base_orientation = r.base_orientation;
  fit.joint_angles = r.angles;
  const auto lam = fit.flatten();
  const ViolationStats v = violation_stats(std::vector<AngleVector>{r.angles}, topo.angle_limits());
  const json out = {{"angles_rad", std::vector<double>(r.angles.begin(), r.angles.end())},
                    {"base_orientation_rad", r.base_orientation},
                    {"residual_mm", r.residual_mm},
                    {"converged", r.converged},
                    {"violated_fraction", v.violated_fraction},
                    {"lambda", std::vector<double>(lam.begin(), lam.end())}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_gradcheck(const Options& o, int trials, RunLog& log) {
  const KinematicTopology topo = load_topology(o);
  const HandShapeProfile ref = HandShapeProfile::reference();
  Rng rng = make_rng(o.seed, 0, 5);
  double worst = 0.0;
  for (int t = 0; t < trials; ++t) {
    const HandParameters p = sample_hand(ref, topo.angle_limits(), rng);
    const auto flat = p.flatten();
    const Eigen::VectorXd x = Eigen::Map<const Eigen::VectorXd>(flat.data(), kNumParams);
    auto f = [&topo](const Eigen::VectorXd& v) {
      const auto j = fkine(HandParameters::unflatten(std::span<const double, kNumParams>(v.data(), kNumParams)), topo)
                         .flatten();
      return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(j.data(), 3 * kNumJoints));
    };
    worst = std::max(worst, max_relative_error(fkine_jacobian(p, topo).values, finite_diff_jacobian(f, x)));
  }
  const bool pass = worst < 1e-5;
  log.extra = {{"max_relative_error", worst}, {"trials", trials}};
  std::cout << json{{"trials", trials}, {"seed", o.seed}, {"max_relative_error", worst}, {"threshold", 1e-5},
                    {"pass", pass}}
                   .dump()
            << "\n";
  return pass ? 0 : 1;
}

int cmd_normalize(const std::string& joints_path, const std::string& state_path, bool inverse, RunLog& log) {
  const JointSet j = read_joints(joints_path);
  const json sj = parse_json_file(state_path);
  TransformState st;
  try {
    st = TransformState::from_json(sj.contains("state") ? sj.at("state") : sj);
    st.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  log.inputs = {joints_path, state_path};
  std::cout << joints_json(inverse ? back_transform(j, st) : normalize_joints(j, st)).dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hand kinematics toolkit: synthetic data, preprocessing, training and checks"};
  app.require_subcommand(1);
  app.fallthrough();
  Options o;
  app.add_option("--seed", o.seed, "Seed for every random stream")->capture_default_str();
  app.add_option("--topology", o.topology, "Kinematic topology JSON (default: built-in)");

  std::size_t n = 100;
  std::string profiles, dataset, split = "train", model = "posenet", mode = "variable_hand", checkpoint;
  std::string params_file, joints_file, shape_file, state_file;
  std::size_t index = 0;
  int count = 4, trials = 100;
  bool images = false, inverse = false;
  std::optional<int> epochs;
  std::optional<double> lr, lambda;

  auto* gen = app.add_subcommand("gen", "Generate a synthetic depth dataset");
  gen->add_option("--n", n, "Number of frames")->check(CLI::PositiveNumber)->capture_default_str();
  gen->add_option("--out", o.out, "Output directory")->required();
  gen->add_option("--config", o.config, "Generator config JSON");
  gen->add_option("--profiles", profiles, "Hand shape profiles JSON");

  auto* pre = app.add_subcommand("preprocess", "Preprocess dataset frames to normalized images");
  pre->add_option("--dataset", dataset, "Dataset directory")->required();
  pre->add_option("--split", split, "Split to process (empty: all)")->capture_default_str();
  pre->add_option("--out", o.out, "Output directory")->required();
  pre->add_flag("--images", images, "Also write PGM images");

  auto* aug = app.add_subcommand("augment-preview", "Write augmented variants of one sample as PGM");
  aug->add_option("--dataset", dataset, "Dataset directory")->required();
  aug->add_option("--index", index, "Sample index")->capture_default_str();
  aug->add_option("--count", count, "Number of variants")->check(CLI::PositiveNumber)->capture_default_str();
  aug->add_option("--out", o.out, "Output directory")->required();

  auto* train = app.add_subcommand("train", "Train the pose network or the normalization cascade");
  train->add_option("--dataset", dataset, "Dataset directory")->required();
  train->add_option("--model", model, "posenet or cascade")
      ->check(CLI::IsMember({"posenet", "cascade"}))
      ->capture_default_str();
  train->add_option("--mode", mode, "variable_hand, fixed_hand or direct")->capture_default_str();
  train->add_option("--config", o.config, "Training config JSON (train, network, cascade)");
  train->add_option("--epochs", epochs, "Override epochs");
  train->add_option("--lr", lr, "Override learning rate");
  train->add_option("--lambda", lambda, "Override the constraint weight");
  train->add_option("--out", o.out, "Output directory")->required();

  auto* eval = app.add_subcommand("eval", "Evaluate a pose network checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--dataset", dataset, "Dataset directory")->required();
  eval->add_option("--split", split, "Split to evaluate")->capture_default_str();
  eval->add_option("--out", o.out, "Output directory")->required();

  auto* fk = app.add_subcommand("fk", "Forward kinematics of 61 hand parameters");
  fk->add_option("params", params_file, "JSON array of 61 values or object with 'lambda'")->required();
  fk->add_option("--out", o.out, "Directory for the run manifest")->capture_default_str();

  auto* ik = app.add_subcommand("ik", "Joint angles from 21 joints and a hand shape");
  ik->add_option("--joints", joints_file, "JSON with 63 values or 'joints_mm'")->required();
  ik->add_option("--shape", shape_file, "Hand parameters supplying the shape")->required();
  ik->add_option("--out", o.out, "Directory for the run manifest")->capture_default_str();

  auto* gc = app.add_subcommand("gradcheck", "Compare the analytic Jacobian with finite differences");
  gc->add_option("--trials", trials, "Random hands to check")->check(CLI::PositiveNumber)->capture_default_str();
  gc->add_option("--out", o.out, "Directory for the run manifest")->capture_default_str();

  auto* norm = app.add_subcommand("normalize", "Normalize joints with a transform state, or invert it");
  norm->add_option("--joints", joints_file, "JSON with 63 values or 'joints_mm'")->required();
  norm->add_option("--state", state_file, "TransformState JSON (or object with 'state')")->required();
  norm->add_flag("--inverse", inverse, "Apply the back-transform instead");
  norm->add_option("--out", o.out, "Directory for the run manifest")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const auto start = std::chrono::steady_clock::now();
  const std::string name = app.get_subcommands().front()->get_name();
  RunLog log;
  try {
    int rc = 0;
    if (name == "gen") rc = cmd_gen(o, n, profiles, log);
    else if (name == "preprocess") rc = cmd_preprocess(o, dataset, split, images, log);
    else if (name == "augment-preview") rc = cmd_augment_preview(o, dataset, index, count, log);
    else if (name == "train") rc = cmd_train(o, dataset, model, mode, epochs, lr, lambda, log);
    else if (name == "eval") rc = cmd_eval(o, checkpoint, dataset, split, log);
    else if (name == "fk") rc = cmd_fk(o, params_file, log);
    else if (name == "ik") rc = cmd_ik(o, joints_file, shape_file, log);
    else if (name == "gradcheck") rc = cmd_gradcheck(o, trials, log);
    else if (name == "normalize") rc = cmd_normalize(joints_file, state_file, inverse, log);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    append_run_manifest(name, o, log, secs);
    return rc;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
