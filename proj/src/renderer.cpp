#include "handkin/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "handkin/dataset_io.hpp"
#include "handkin/kinematics.hpp"

namespace handkin {

namespace {

nlohmann::json vec3_json(const Vec3& v) { return {v.x(), v.y(), v.z()}; }
Vec3 json_vec3(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

template <std::size_t N>
std::array<double, N> json_array(const nlohmann::json& j) {
  const auto v = j.get<std::vector<double>>();
  require(v.size() == N, "profile: wrong array length");
  std::array<double, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

// Ray from the camera centre along unit direction rd; returns hit distance or -1.
double intersect_capsule(const Vec3& rd, const Capsule& c) {
  const Vec3 ro = Vec3::Zero();
  const Vec3 ba = c.b - c.a;
  const Vec3 oa = ro - c.a;
  const double baba = ba.dot(ba);
  const double bard = ba.dot(rd);
  const double baoa = ba.dot(oa);
  const double rdoa = rd.dot(oa);
  const double oaoa = oa.dot(oa);
  const double a = baba - bard * bard;
  double b = baba * rdoa - baoa * bard;
  double cc = baba * oaoa - baoa * baoa - c.radius * c.radius * baba;
  double h = b * b - a * cc;
  if (a > 1e-12 && h >= 0.0) {
    const double t = (-b - std::sqrt(h)) / a;
    const double y = baoa + t * bard;
    if (y > 0.0 && y < baba) return t;
  }
  // End caps: test both spheres, keep the nearest hit.
  double best = -1.0;
  for (const Vec3* centre : {&c.a, &c.b}) {
    const Vec3 oc = ro - *centre;
    b = rd.dot(oc);
    cc = oc.dot(oc) - c.radius * c.radius;
    h = b * b - cc;
    if (h >= 0.0) {
      const double t = -b - std::sqrt(h);
      if (t > 0.0 && (best < 0.0 || t < best)) best = t;
    }
  }
  return best;
}

double intersect_sphere(const Vec3& rd, const Sphere& s) {
  const Vec3 oc = -s.centre;
  const double b = rd.dot(oc);
  const double c = oc.dot(oc) - s.radius * s.radius;
  const double h = b * b - c;
  if (h < 0.0) return -1.0;
  const double t = -b - std::sqrt(h);
  return t > 0.0 ? t : -1.0;
}

struct PixelBox {
  int u0, u1, v0, v1;
};

// Conservative pixel bounds of an axis-aligned box [lo, hi] with lo.z > 0.
PixelBox project_box(const Vec3& lo, const Vec3& hi, const CameraModel& cam) {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  for (double x : {lo.x(), hi.x()}) {
    for (double z : {lo.z(), hi.z()}) {
      xmin = std::min(xmin, x / z);
      xmax = std::max(xmax, x / z);
    }
  }
  for (double y : {lo.y(), hi.y()}) {
    for (double z : {lo.z(), hi.z()}) {
      ymin = std::min(ymin, y / z);
      ymax = std::max(ymax, y / z);
    }
  }
  const auto& k = cam.intrinsics;
  PixelBox box;
  box.u0 = std::max(0, static_cast<int>(std::floor(k.fx * xmin + k.cx)) - 1);
  box.u1 = std::min(cam.width - 1, static_cast<int>(std::ceil(k.fx * xmax + k.cx)) + 1);
  box.v0 = std::max(0, static_cast<int>(std::floor(k.fy * ymin + k.cy)) - 1);
  box.v1 = std::min(cam.height - 1, static_cast<int>(std::ceil(k.fy * ymax + k.cy)) + 1);
  return box;
}

template <class Prim, class Hit>
void raster_primitive(const Prim& prim, const Vec3& lo, const Vec3& hi, const CameraModel& cam, DepthFrame& frame,
                      Hit hit) {
  require(lo.z() > 0.0, "render: primitive reaches behind the camera");
  const PixelBox box = project_box(lo, hi, cam);
  const auto& k = cam.intrinsics;
  for (int v = box.v0; v <= box.v1; ++v) {
    for (int u = box.u0; u <= box.u1; ++u) {
      const Vec3 ray((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
      const double norm = ray.norm();
      const double t = hit(ray / norm, prim);
      if (t <= 0.0) continue;
      const float z = static_cast<float>(t / norm);
      float& dst = frame.at(u, v);
      if (dst == 0.0f || z < dst) dst = z;
    }
  }
}

}  // namespace

void HandShapeProfile::validate() const {
  for (int i = 0; i < kNumBones; ++i) {
    require(std::isfinite(bone_mean_mm[i]) && bone_mean_mm[i] > 0.0, "profile: bone means must be positive");
    require(std::isfinite(bone_std_mm[i]) && bone_std_mm[i] >= 0.0, "profile: stds must be >= 0");
    require(std::isfinite(bone_radius_mm[i]) && bone_radius_mm[i] > 0.0, "profile: radii must be positive");
  }
  for (int i = 0; i < 5; ++i) {
    require(vector_mean_mm[i].allFinite() && vector_mean_mm[i].norm() > 0.0, "profile: base vectors must be nonzero");
    require(vector_std_mm[i].allFinite() && (vector_std_mm[i].array() >= 0.0).all(), "profile: stds must be >= 0");
  }
  require(palm_radius_mm > 0.0 && palm_sphere_mm > 0.0, "profile: palm radii must be positive");
}

nlohmann::json HandShapeProfile::to_json() const {
  nlohmann::json j;
  j["name"] = name;
  j["seen"] = seen;
  j["bone_lengths_mm"] = bone_mean_mm;
  j["bone_length_std_mm"] = bone_std_mm;
  for (int i = 0; i < 5; ++i) {
    j["base_vectors_mm"].push_back(vec3_json(vector_mean_mm[i]));
    j["base_vector_std_mm"].push_back(vec3_json(vector_std_mm[i]));
  }
  j["bone_radii_mm"] = bone_radius_mm;
  j["palm_radius_mm"] = palm_radius_mm;
  j["palm_sphere_mm"] = palm_sphere_mm;
  return j;
}

HandShapeProfile HandShapeProfile::from_json(const nlohmann::json& j) {
  HandShapeProfile p;
  try {
    p.name = j.at("name").get<std::string>();
    p.seen = j.value("seen", true);
    p.bone_mean_mm = json_array<kNumBones>(j.at("bone_lengths_mm"));
    p.bone_std_mm = json_array<kNumBones>(j.at("bone_length_std_mm"));
    p.bone_radius_mm = json_array<kNumBones>(j.at("bone_radii_mm"));
    for (int i = 0; i < 5; ++i) {
      p.vector_mean_mm[i] = json_vec3(j.at("base_vectors_mm").at(static_cast<std::size_t>(i)));
      p.vector_std_mm[i] = json_vec3(j.at("base_vector_std_mm").at(static_cast<std::size_t>(i)));
    }
    p.palm_radius_mm = j.at("palm_radius_mm").get<double>();
    p.palm_sphere_mm = j.at("palm_sphere_mm").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("profile: malformed json: ") + e.what());
  }
  p.validate();
  return p;
}

HandShapeProfile HandShapeProfile::reference() {
  HandShapeProfile p;
  p.name = "reference";
  p.bone_mean_mm = {40, 32, 28, 45, 26, 22, 50, 30, 24, 46, 28, 23, 36, 21, 20};
  p.bone_std_mm.fill(1.0);
  p.vector_mean_mm = {Vec3(-50, 28, -12), Vec3(-2, 22, 0), Vec3(-4, -20, 0), Vec3(-14, -38, 0), Vec3(-85, 0, 0)};
  p.vector_std_mm.fill(Vec3(1.5, 1.5, 1.5));
  p.bone_radius_mm = {10, 9, 8, 9, 8, 7, 9, 8, 7, 8.5, 7.5, 6.5, 8, 7, 6};
  p.palm_radius_mm = 10.0;
  p.palm_sphere_mm = 28.0;
  return p;
}

std::vector<HandShapeProfile> default_profiles() {
  // (overall scale, finger-to-palm proportion) per profile; first five are seen in training.
  constexpr std::array<std::pair<double, double>, 10> kShapes = {{{0.88, 1.00},
                                                                  {0.95, 1.04},
                                                                  {1.00, 1.00},
                                                                  {1.06, 0.96},
                                                                  {1.12, 1.02},
                                                                  {0.84, 0.97},
                                                                  {0.92, 0.95},
                                                                  {0.98, 1.06},
                                                                  {1.09, 1.03},
                                                                  {1.17, 0.98}}};
  const HandShapeProfile ref = HandShapeProfile::reference();
  std::vector<HandShapeProfile> out;
  for (std::size_t k = 0; k < kShapes.size(); ++k) {
    HandShapeProfile p = ref;
    const auto [scale, finger] = kShapes[k];
    p.seen = k < 5;
    p.name = (p.seen ? "seen_" : "unseen_") + std::to_string(k % 5);
    for (int i = 0; i < kNumBones; ++i) {
      p.bone_mean_mm[i] = ref.bone_mean_mm[i] * scale * finger;
      p.bone_radius_mm[i] = ref.bone_radius_mm[i] * scale;
    }
    for (int i = 0; i < 5; ++i) p.vector_mean_mm[i] = ref.vector_mean_mm[i] * scale;
    p.palm_radius_mm = ref.palm_radius_mm * scale;
    p.palm_sphere_mm = ref.palm_sphere_mm * scale;
    out.push_back(p);
  }
  return out;
}

nlohmann::json profiles_to_json(std::span<const HandShapeProfile> profiles) {
  nlohmann::json j;
  j["profiles"] = nlohmann::json::array();
  for (const auto& p : profiles) j["profiles"].push_back(p.to_json());
  return j;
}

std::vector<HandShapeProfile> load_profiles(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("profiles: cannot parse " + path.string() + ": " + e.what());
  }
  std::vector<HandShapeProfile> out;
  if (!j.contains("profiles") || !j["profiles"].is_array()) {
    throw std::invalid_argument("profiles: missing 'profiles' array in " + path.string());
  }
  for (const auto& p : j["profiles"]) out.push_back(HandShapeProfile::from_json(p));
  require(!out.empty(), "profiles: at least one profile is required");
  return out;
}

HandParameters sample_hand(const HandShapeProfile& profile, const AngleLimits& limits, Rng& rng,
                           const SamplingRegion& region) {
  profile.validate();
  std::normal_distribution<double> unit(0.0, 1.0);
  auto uniform = [&rng](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };

  HandParameters p;
  for (int i = 0; i < kNumBones; ++i) {
    const double x = profile.bone_mean_mm[i] + profile.bone_std_mm[i] * unit(rng);
    p.bone_lengths[i] = std::max(x, 0.05 * profile.bone_mean_mm[i]);
  }
  std::array<Vec3, 5> vec;
  for (int i = 0; i < 5; ++i) {
    for (int c = 0; c < 3; ++c) vec[i][c] = profile.vector_mean_mm[i][c] + profile.vector_std_mm[i][c] * unit(rng);
  }
  for (int i = 0; i < 4; ++i) p.finger_vectors[i] = {vec[i].x(), vec[i].y(), vec[i].z()};
  p.wrist_vector = {vec[4].x(), vec[4].y(), vec[4].z()};
  for (int a = 0; a < kNumAngles; ++a) {
    p.joint_angles[a] = uniform(limits.low[a] + region.angle_margin_rad, limits.up[a] - region.angle_margin_rad);
  }
  p.base_translation = {uniform(-region.xy_range_mm, region.xy_range_mm),
                        uniform(-region.xy_range_mm, region.xy_range_mm), uniform(region.z_min_mm, region.z_max_mm)};
  p.base_orientation = {uniform(-std::numbers::pi, std::numbers::pi), uniform(-region.tilt_range_rad, region.tilt_range_rad),
                        uniform(-region.tilt_range_rad, region.tilt_range_rad)};
  return p;
}

DepthFrame render_primitives(std::span<const Capsule> capsules, std::span<const Sphere> spheres,
                             const CameraModel& camera) {
  camera.intrinsics.validate();
  require(camera.width > 0 && camera.height > 0, "render: camera raster must be non-empty");
  DepthFrame frame(camera.width, camera.height, camera.intrinsics);
  for (const auto& c : capsules) {
    const Vec3 r = Vec3::Constant(c.radius);
    raster_primitive(c, c.a.cwiseMin(c.b) - r, c.a.cwiseMax(c.b) + r, camera, frame, intersect_capsule);
  }
  for (const auto& s : spheres) {
    const Vec3 r = Vec3::Constant(s.radius);
    raster_primitive(s, s.centre - r, s.centre + r, camera, frame, intersect_sphere);
  }
  return frame;
}

DepthFrame render_depth(const HandParameters& params, const KinematicTopology& topo, const CameraModel& camera,
                        const HandShapeProfile& radii) {
  const JointSet j = fkine(params, topo);
  std::vector<Capsule> capsules;
  const Vec3& wrist = j[kWristIndex];
  Vec3 palm_centre = wrist;
  for (Finger f : kFingers) {
    const int fi = static_cast<int>(f);
    for (int n = 0; n < 3; ++n) {
      capsules.push_back({j.at(f, static_cast<JointType>(static_cast<int>(JointType::MCP) + n)),
                          j.at(f, static_cast<JointType>(static_cast<int>(JointType::PIP) + n)),
                          radii.bone_radius_mm[static_cast<std::size_t>(3 * fi + n)]});
    }
    capsules.push_back({wrist, j.at(f, JointType::MCP), radii.palm_radius_mm});
    palm_centre += j.at(f, JointType::MCP);
  }
  palm_centre /= 6.0;
  const std::array<Sphere, 1> spheres = {Sphere{palm_centre, radii.palm_sphere_mm}};
  return render_primitives(capsules, spheres, camera);
}

SyntheticSample make_synthetic_sample(std::size_t index, std::size_t n, std::span<const HandShapeProfile> profiles,
                                      std::uint64_t seed, const KinematicTopology& topo,
                                      const GeneratorConfig& config) {
  require(!profiles.empty(), "generate: at least one profile is required");
  SyntheticSample s;
  std::ostringstream id;
  id << std::setw(6) << std::setfill('0') << index;
  s.id = id.str();
  const double pos = static_cast<double>(index) / static_cast<double>(n);
  s.split = pos < config.train_fraction ? "train"
            : pos < config.train_fraction + config.validation_fraction ? "validation"
                                                                       : "test";
  std::vector<int> pool;
  for (std::size_t k = 0; k < profiles.size(); ++k) {
    if (s.split == "test" || profiles[k].seen) pool.push_back(static_cast<int>(k));
  }
  require(!pool.empty(), "generate: no seen profile available for training splits");
  Rng rng = make_rng(seed, index, 1);
  s.profile = pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
  const HandShapeProfile& prof = profiles[static_cast<std::size_t>(s.profile)];
  s.params = sample_hand(prof, topo.angle_limits(), rng, config.region);
  s.joints = fkine(s.params, topo);
  s.frame = render_depth(s.params, topo, config.camera, prof);
  if (config.depth_noise_std_mm > 0.0) {
    std::normal_distribution<double> noise(0.0, config.depth_noise_std_mm);
    for (float& z : s.frame.depth) {
      if (z > 0.0f) z = std::max(0.0f, z + static_cast<float>(noise(rng)));
    }
  }
  return s;
}

ProcessedSample preprocess_synthetic(const SyntheticSample& sample, const KinematicTopology& topo,
                                     const PipelineConfig& config) {
  ProcessedSample p = preprocess_frame(sample.frame, sample.joints, topo, config, sample.id);
  p.params_gt = preprocess_params(sample.params, p.state);
  return p;
}

nlohmann::json generate_dataset(std::size_t n, std::span<const HandShapeProfile> profiles, std::uint64_t seed,
                                const std::filesystem::path& out_dir, const KinematicTopology& topo,
                                const GeneratorConfig& config) {
  require(n > 0, "generate_dataset: n must be positive");
  for (const auto& p : profiles) p.validate();
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "frames", ec);
  if (ec) throw IoError("cannot create " + (out_dir / "frames").string() + ": " + ec.message());

  nlohmann::json manifest;
  manifest["format"] = "HKD1";
  manifest["units"] = {{"depth", "mm"}, {"joints", "mm"}, {"angles", "rad"}};
  manifest["seed"] = seed;
  manifest["camera"] = {{"width", config.camera.width},
                        {"height", config.camera.height},
                        {"fx", config.camera.intrinsics.fx},
                        {"fy", config.camera.intrinsics.fy},
                        {"cx", config.camera.intrinsics.cx},
                        {"cy", config.camera.intrinsics.cy}};
  manifest["depth_noise_std_mm"] = config.depth_noise_std_mm;
  manifest["annotations"] = "annotations.jsonl";
  manifest["profiles"] = profiles_to_json(profiles)["profiles"];
  manifest["samples"] = nlohmann::json::array();

  std::string annotations;
  std::string hash_input;
  for (std::size_t i = 0; i < n; ++i) {
    const SyntheticSample s = make_synthetic_sample(i, n, profiles, seed, topo, config);
    const std::string file = "frames/" + s.id + ".hkd";
    write_depth_frame(out_dir / file, s.frame);
    Annotation a{s.id, s.joints, s.params};
    annotations += a.to_json().dump() + "\n";
    manifest["samples"].push_back({{"id", s.id}, {"file", file}, {"split", s.split}, {"profile", s.profile},
                                   {"seed", seed}, {"stream", i}});
    hash_input += git_file_hash(out_dir / file);
  }
  write_file(out_dir / "annotations.jsonl", annotations);
  hash_input += git_blob_hash(annotations);
  manifest["checksum"] = git_blob_hash(hash_input);
  write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return manifest;
}

}  // namespace handkin
