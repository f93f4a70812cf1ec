#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "handkin/hand_parameters.hpp"
#include "handkin/kinematics.hpp"
#include "handkin/normalization.hpp"
#include "handkin/topology.hpp"
#include "handkin/types.hpp"

namespace handkin {

struct Intrinsics {
  double fx = 300.0;
  double fy = 300.0;
  double cx = 160.0;
  double cy = 120.0;

  void validate() const;
  /// Pixel coordinates (u, v) of a camera-frame point.
  Eigen::Vector2d project(const Vec3& p) const { return {fx * p.x() / p.z() + cx, fy * p.y() / p.z() + cy}; }
  Vec3 back_project(double u, double v, double z) const { return {(u - cx) * z / fx, (v - cy) * z / fy, z}; }
};

/// Raw depth raster, row-major, millimetres; 0 marks a missing measurement.
struct DepthFrame {
  int width = 0;
  int height = 0;
  std::vector<float> depth;
  Intrinsics intrinsics;

  DepthFrame() = default;
  DepthFrame(int w, int h, const Intrinsics& k)
      : width(w), height(h), depth(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), 0.0f), intrinsics(k) {}

  float& at(int u, int v) { return depth[static_cast<std::size_t>(v) * static_cast<std::size_t>(width) + static_cast<std::size_t>(u)]; }
  float at(int u, int v) const { return depth[static_cast<std::size_t>(v) * static_cast<std::size_t>(width) + static_cast<std::size_t>(u)]; }
  void validate() const;
};

/// Square-pixel raster of normalized depth in [-1, 1]; +1 is background.
struct Raster {
  int width = 0;
  int height = 0;
  std::vector<float> data;

  static constexpr float kBackground = 1.0f;

  Raster() = default;
  Raster(int w, int h, float fill = kBackground)
      : width(w), height(h), data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), fill) {}

  float& at(int u, int v) { return data[static_cast<std::size_t>(v) * static_cast<std::size_t>(width) + static_cast<std::size_t>(u)]; }
  float at(int u, int v) const { return data[static_cast<std::size_t>(v) * static_cast<std::size_t>(width) + static_cast<std::size_t>(u)]; }
  bool is_background(int u, int v) const { return at(u, v) >= kBackground; }
  bool operator==(const Raster&) const = default;
};

struct PipelineConfig {
  double cube_size_mm = 300.0;
  int image_size = 176;
  int crop_size = 128;

  /// Pixel pitch of the preprocessed image, mm.
  double pixel_mm() const { return cube_size_mm / image_size; }
  void validate() const;
};

struct ProcessedSample {
  Raster image;
  TransformState state;
  JointSet joints_gt;  // COM-relative, rotated camera frame
  std::optional<HandParameters> params_gt;
  std::string id;
  bool crop_clamped = false;
};

/// Planar COM from the joint bounding box, depth from the near cluster of in-box depths.
Vec3 compute_com(const JointSet& joints_camera, const DepthFrame& frame);

/// Depths inside the cube around com, back-projected and rotated by camera_rotation(com).
std::vector<Vec3> extract_cube(const DepthFrame& frame, const Vec3& com, double cube_size_mm);

/// Orthographic z-buffer of COM-relative points, 3x3 foreground median, depth / (cube/2).
Raster render_points_to_image(const std::vector<Vec3>& points, int out_size, double cube_size_mm);

/// 3x3 median over foreground neighbours; background pixels are left untouched.
Raster median_filter3(const Raster& in);

/// Full offline preprocessing of one frame.
ProcessedSample preprocess_frame(const DepthFrame& frame, const JointSet& joints_camera, const KinematicTopology& topo,
                                 const PipelineConfig& config, std::string id = {});

struct AugmentationDraw {
  double scale = 1.0;
  double rotation_rad = 0.0;
  Vec3 translation_mm = Vec3::Zero();

  static AugmentationDraw identity() { return {}; }
};

using Rng = std::mt19937_64;

/// Per-stream generator seeded from (global seed, stream id, purpose tag).
Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t tag = 0);

/// scale ~ N(1, 0.075) clamped to [0.75, 1.25], rotation ~ U(-pi, pi),
/// translation per axis ~ N(0, 4 mm) clamped to [-15, 15] mm.
AugmentationDraw draw_augmentation(Rng& rng);

/// Applies j' = Rz(rot) * (scale * j) + translation consistently to image, joints and state.
ProcessedSample augment(const ProcessedSample& sample, const AugmentationDraw& draw, const PipelineConfig& config);
ProcessedSample augment(const ProcessedSample& sample, Rng& rng, const PipelineConfig& config);

/// Samples src at the affine map of destination pixel coordinates (both about
/// the raster centres, in pixels): src = a * (dst - c_dst) + b + c_src.
/// Foreground is decided by the nearest source pixel; values are bilinear over
/// foreground neighbours only. Output depth = depth_scale * d + depth_offset, clamped.
Raster warp_raster(const Raster& src, int out_w, int out_h, const Eigen::Matrix2d& a, const Eigen::Vector2d& b,
                   double depth_scale, double depth_offset);

struct CropResult {
  Raster image;
  Vec3 t_applied = Vec3::Zero();  // mm actually removed (x, y snapped to whole pixels)
  bool clamped = false;
};

/// 128x128 window centred on the estimated MCP, depth re-centred on its depth.
CropResult crop_recenter_raster(const Raster& image, const Vec3& t_est, const PipelineConfig& config);
/// In-plane rotation by -alpha about the raster centre (points p -> Rz(-alpha) p).
Raster rotate_raster(const Raster& image, double alpha);
/// Uniform rescale by 1/s about the raster centre, depth included.
Raster rescale_raster(const Raster& image, double s);
/// Average pooling by an integer factor.
Raster downsample(const Raster& image, int factor);

/// Crop, rotate and rescale with ground-truth (or estimated) parameters; the
/// returned state has t replaced by the translation actually applied.
struct NormalizedImage {
  Raster image;
  TransformState state;
  bool clamped = false;
};
NormalizedImage normalize_image(const ProcessedSample& sample, const TransformParams& params,
                                const PipelineConfig& config);

}  // namespace handkin
