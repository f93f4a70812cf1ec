#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "handkin/depth.hpp"
#include "handkin/hand_parameters.hpp"
#include "handkin/topology.hpp"

namespace handkin {

/// Mean hand shape plus per-parameter variation, and render radii.
struct HandShapeProfile {
  std::string name;
  bool seen = true;  // false: held out from training (unseen-shape evaluation)
  std::array<double, kNumBones> bone_mean_mm{};
  std::array<double, kNumBones> bone_std_mm{};
  std::array<Vec3, 5> vector_mean_mm{};  // v_T, v_I, v_R, v_P, v_W
  std::array<Vec3, 5> vector_std_mm{};
  std::array<double, kNumBones> bone_radius_mm{};
  double palm_radius_mm = 9.0;   // metacarpal capsules wrist -> MCP
  double palm_sphere_mm = 30.0;  // sphere at the palm centre

  void validate() const;
  nlohmann::json to_json() const;
  static HandShapeProfile from_json(const nlohmann::json& j);
  /// Reference adult hand; the default profiles are scaled variants of it.
  static HandShapeProfile reference();
};

std::vector<HandShapeProfile> default_profiles();
std::vector<HandShapeProfile> load_profiles(const std::filesystem::path& path);
nlohmann::json profiles_to_json(std::span<const HandShapeProfile> profiles);

/// Camera-facing region the base pose is drawn from.
struct SamplingRegion {
  double xy_range_mm = 40.0;
  double z_min_mm = 380.0;
  double z_max_mm = 480.0;
  double tilt_range_rad = 0.5235987755982988;  // |Ry|, |Rx| <= pi/6
  double angle_margin_rad = 0.03490658503988659;  // 2 degrees inside each limit
};

HandParameters sample_hand(const HandShapeProfile& profile, const AngleLimits& limits, Rng& rng,
                           const SamplingRegion& region = {});

struct Capsule {
  Vec3 a;
  Vec3 b;
  double radius;
};

struct Sphere {
  Vec3 centre;
  double radius;
};

struct CameraModel {
  int width = 320;
  int height = 240;
  Intrinsics intrinsics{};
};

/// Nearest-surface z per pixel by analytic ray-primitive intersection; 0 where nothing is hit.
DepthFrame render_primitives(std::span<const Capsule> capsules, std::span<const Sphere> spheres,
                             const CameraModel& camera);

/// Depth frame of the capsule hand for these parameters. Throws
/// std::invalid_argument when any primitive reaches behind the camera.
DepthFrame render_depth(const HandParameters& params, const KinematicTopology& topo, const CameraModel& camera,
                        const HandShapeProfile& radii);

struct GeneratorConfig {
  CameraModel camera{};
  SamplingRegion region{};
  double depth_noise_std_mm = 0.0;
  double train_fraction = 0.8;
  double validation_fraction = 0.1;
};

/// Writes frames (HKD1), annotations.jsonl and manifest.json under out_dir; returns the manifest.
nlohmann::json generate_dataset(std::size_t n, std::span<const HandShapeProfile> profiles, std::uint64_t seed,
                                 const std::filesystem::path& out_dir, const KinematicTopology& topo,
                                 const GeneratorConfig& config = {});

/// One in-memory labelled sample (camera frame).
struct SyntheticSample {
  std::string id;
  std::string split;
  int profile = 0;
  HandParameters params;
  JointSet joints;
  DepthFrame frame;
};

/// Deterministic per-sample generation shared by generate_dataset and in-memory experiments.
SyntheticSample make_synthetic_sample(std::size_t index, std::size_t n, std::span<const HandShapeProfile> profiles,
                                      std::uint64_t seed, const KinematicTopology& topo,
                                      const GeneratorConfig& config);

/// preprocess_frame plus the ground-truth parameters moved into the same frame.
ProcessedSample preprocess_synthetic(const SyntheticSample& sample, const KinematicTopology& topo,
                                     const PipelineConfig& config);

}  // namespace handkin
