#include "handkin/depth.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace handkin {

void Intrinsics::validate() const {
  require(std::isfinite(fx) && std::isfinite(fy) && std::isfinite(cx) && std::isfinite(cy), "intrinsics must be finite");
  require(fx > 0.0 && fy > 0.0 && cx > 0.0 && cy > 0.0, "intrinsics must be positive");
}

void DepthFrame::validate() const {
  intrinsics.validate();
  require(width > 0 && height > 0, "depth frame: empty raster");
  require(depth.size() == static_cast<std::size_t>(width) * static_cast<std::size_t>(height),
          "depth frame: raster size mismatch");
  for (float z : depth) require(std::isfinite(z) && z >= 0.0f, "depth frame: depth must be finite and >= 0");
}

void PipelineConfig::validate() const {
  require(std::isfinite(cube_size_mm) && cube_size_mm > 0.0, "pipeline: cube size must be positive");
  require(image_size > 0 && crop_size > 0 && crop_size <= image_size, "pipeline: bad image/crop size");
}

namespace {

// 1D two-means; returns the mean of the cluster with the smaller centre.
double near_cluster_mean(const std::vector<double>& depths) {
  const auto [lo_it, hi_it] = std::minmax_element(depths.begin(), depths.end());
  double c_near = *lo_it;
  double c_far = *hi_it;
  if (c_far - c_near < 1e-9) return c_near;
  for (int it = 0; it < 100; ++it) {
    double s_near = 0.0, s_far = 0.0;
    std::size_t n_near = 0, n_far = 0;
    for (double z : depths) {
      if (std::abs(z - c_near) <= std::abs(z - c_far)) {
        s_near += z;
        ++n_near;
      } else {
        s_far += z;
        ++n_far;
      }
    }
    const double next_near = n_near ? s_near / static_cast<double>(n_near) : c_near;
    const double next_far = n_far ? s_far / static_cast<double>(n_far) : c_far;
    if (next_near == c_near && next_far == c_far) break;
    c_near = next_near;
    c_far = next_far;
  }
  return std::min(c_near, c_far);
}

float clamp_unit(double x) { return static_cast<float>(std::clamp(x, -1.0, 1.0)); }

}  // namespace

Vec3 compute_com(const JointSet& joints_camera, const DepthFrame& frame) {
  frame.intrinsics.validate();
  require(joints_camera.all_finite(), "compute_com: joints must be finite");
  double u_min = std::numeric_limits<double>::infinity(), v_min = u_min;
  double u_max = -u_min, v_max = -u_min;
  for (const auto& p : joints_camera.positions) {
    require(p.z() > 0.0, "compute_com: joints must lie in front of the camera");
    const Eigen::Vector2d uv = frame.intrinsics.project(p);
    u_min = std::min(u_min, uv.x());
    u_max = std::max(u_max, uv.x());
    v_min = std::min(v_min, uv.y());
    v_max = std::max(v_max, uv.y());
  }
  const int u0 = std::max(0, static_cast<int>(std::floor(u_min)));
  const int u1 = std::min(frame.width - 1, static_cast<int>(std::ceil(u_max)));
  const int v0 = std::max(0, static_cast<int>(std::floor(v_min)));
  const int v1 = std::min(frame.height - 1, static_cast<int>(std::ceil(v_max)));
  std::vector<double> depths;
  for (int v = v0; v <= v1; ++v) {
    for (int u = u0; u <= u1; ++u) {
      if (frame.at(u, v) > 0.0f) depths.push_back(frame.at(u, v));
    }
  }
  if (depths.empty()) throw DegenerateInputError("compute_com: no valid depth inside the joint bounding box");
  const double z = near_cluster_mean(depths);
  return frame.intrinsics.back_project(0.5 * (u_min + u_max), 0.5 * (v_min + v_max), z);
}

std::vector<Vec3> extract_cube(const DepthFrame& frame, const Vec3& com, double cube_size_mm) {
  require(std::isfinite(cube_size_mm) && cube_size_mm > 0.0, "extract_cube: cube size must be positive");
  const Mat3 r = camera_rotation(com);
  const Vec3 centre = r * com;
  const double half = 0.5 * cube_size_mm;
  std::vector<Vec3> out;
  for (int v = 0; v < frame.height; ++v) {
    for (int u = 0; u < frame.width; ++u) {
      const float z = frame.at(u, v);
      if (!(z > 0.0f)) continue;
      const Vec3 p = r * frame.intrinsics.back_project(u, v, z);
      if ((p - centre).cwiseAbs().maxCoeff() <= half) out.push_back(p);
    }
  }
  return out;
}

Raster median_filter3(const Raster& in) {
  Raster out = in;
  std::array<float, 9> vals{};
  for (int v = 0; v < in.height; ++v) {
    for (int u = 0; u < in.width; ++u) {
      if (in.is_background(u, v)) continue;
      int n = 0;
      for (int dv = -1; dv <= 1; ++dv) {
        for (int du = -1; du <= 1; ++du) {
          const int uu = u + du, vv = v + dv;
          if (uu < 0 || vv < 0 || uu >= in.width || vv >= in.height || in.is_background(uu, vv)) continue;
          vals[static_cast<std::size_t>(n++)] = in.at(uu, vv);
        }
      }
      std::sort(vals.begin(), vals.begin() + n);
      out.at(u, v) = (n % 2) ? vals[static_cast<std::size_t>(n / 2)]
                             : 0.5f * (vals[static_cast<std::size_t>(n / 2 - 1)] + vals[static_cast<std::size_t>(n / 2)]);
    }
  }
  return out;
}

Raster render_points_to_image(const std::vector<Vec3>& points, int out_size, double cube_size_mm) {
  require(std::isfinite(cube_size_mm) && cube_size_mm > 0.0, "render_points_to_image: cube size must be positive");
  require(out_size > 0, "render_points_to_image: output size must be positive");
  const double half = 0.5 * cube_size_mm;
  const double px = cube_size_mm / out_size;
  // z-buffer in mm; +inf = empty
  std::vector<double> zbuf(static_cast<std::size_t>(out_size) * static_cast<std::size_t>(out_size),
                           std::numeric_limits<double>::infinity());
  for (const auto& p : points) {
    if (std::abs(p.z()) > half) continue;
    const int u = static_cast<int>(std::floor((p.x() + half) / px));
    const int v = static_cast<int>(std::floor((p.y() + half) / px));
    if (u < 0 || v < 0 || u >= out_size || v >= out_size) continue;
    double& z = zbuf[static_cast<std::size_t>(v) * static_cast<std::size_t>(out_size) + static_cast<std::size_t>(u)];
    z = std::min(z, p.z());
  }
  Raster img(out_size, out_size);
  for (std::size_t i = 0; i < zbuf.size(); ++i) {
    if (std::isfinite(zbuf[i])) img.data[i] = std::min(clamp_unit(zbuf[i] / half), std::nextafter(1.0f, 0.0f));
  }
  return median_filter3(img);
}

ProcessedSample preprocess_frame(const DepthFrame& frame, const JointSet& joints_camera, const KinematicTopology& topo,
                                 const PipelineConfig& config, std::string id) {
  config.validate();
  ProcessedSample s;
  s.id = std::move(id);
  s.state.com = compute_com(joints_camera, frame);
  s.state.r_cam = camera_rotation(s.state.com);
  s.state.com_depth = (s.state.r_cam * s.state.com).z();
  std::vector<Vec3> pts = extract_cube(frame, s.state.com, config.cube_size_mm);
  for (auto& p : pts) p.z() -= s.state.com_depth;
  s.image = render_points_to_image(pts, config.image_size, config.cube_size_mm);
  s.joints_gt = preprocess_joints(joints_camera, s.state);
  const TransformParams gt = gt_transform_params(s.joints_gt, topo);
  s.state.t = gt.t;
  s.state.alpha_z = gt.alpha_z;
  s.state.s = gt.s;
  return s;
}

Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t tag) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    static_cast<std::uint32_t>(tag)};
  return Rng(seq);
}

AugmentationDraw draw_augmentation(Rng& rng) {
  std::normal_distribution<double> scale(1.0, 0.075);
  std::uniform_real_distribution<double> rot(-std::numbers::pi, std::numbers::pi);
  std::normal_distribution<double> trans(0.0, 4.0);
  AugmentationDraw d;
  d.scale = std::clamp(scale(rng), 0.75, 1.25);
  d.rotation_rad = rot(rng);
  for (int i = 0; i < 3; ++i) d.translation_mm[i] = std::clamp(trans(rng), -15.0, 15.0);
  return d;
}

Raster warp_raster(const Raster& src, int out_w, int out_h, const Eigen::Matrix2d& a, const Eigen::Vector2d& b,
                   double depth_scale, double depth_offset) {
  Raster out(out_w, out_h);
  const Eigen::Vector2d c_dst(0.5 * (out_w - 1), 0.5 * (out_h - 1));
  const Eigen::Vector2d c_src(0.5 * (src.width - 1), 0.5 * (src.height - 1));
  for (int v = 0; v < out_h; ++v) {
    for (int u = 0; u < out_w; ++u) {
      const Eigen::Vector2d q = a * (Eigen::Vector2d(u, v) - c_dst) + b + c_src;
      const int nu = static_cast<int>(std::lround(q.x()));
      const int nv = static_cast<int>(std::lround(q.y()));
      if (nu < 0 || nv < 0 || nu >= src.width || nv >= src.height || src.is_background(nu, nv)) continue;
      const int u0 = static_cast<int>(std::floor(q.x()));
      const int v0 = static_cast<int>(std::floor(q.y()));
      const double fu = q.x() - u0, fv = q.y() - v0;
      double acc = 0.0, wsum = 0.0;
      for (int dv = 0; dv <= 1; ++dv) {
        for (int du = 0; du <= 1; ++du) {
          const int uu = u0 + du, vv = v0 + dv;
          if (uu < 0 || vv < 0 || uu >= src.width || vv >= src.height || src.is_background(uu, vv)) continue;
          const double w = (du ? fu : 1.0 - fu) * (dv ? fv : 1.0 - fv);
          acc += w * src.at(uu, vv);
          wsum += w;
        }
      }
      const double d = acc / wsum;
      out.at(u, v) = std::min(clamp_unit(depth_scale * d + depth_offset), std::nextafter(1.0f, 0.0f));
    }
  }
  return out;
}

ProcessedSample augment(const ProcessedSample& sample, const AugmentationDraw& draw, const PipelineConfig& config) {
  require(std::isfinite(draw.scale) && draw.scale > 0.0, "augment: scale must be positive");
  ProcessedSample out = sample;
  out.id = sample.id + "+aug";
  const Mat3 r = rot_z(draw.rotation_rad);
  for (int j = 0; j < kNumJoints; ++j) out.joints_gt[j] = r * (draw.scale * sample.joints_gt[j]) + draw.translation_mm;
  out.state.t = r * (draw.scale * sample.state.t) + draw.translation_mm;
  out.state.alpha_z = wrap_angle(sample.state.alpha_z + draw.rotation_rad);
  out.state.s = sample.state.s * draw.scale;

  const double px = config.pixel_mm();
  const Eigen::Matrix2d r_inv = rot_z(-draw.rotation_rad).topLeftCorner<2, 2>();
  const Eigen::Vector2d t_px(draw.translation_mm.x() / px, draw.translation_mm.y() / px);
  const Eigen::Matrix2d a = r_inv / draw.scale;
  const Eigen::Vector2d b = -(r_inv * t_px) / draw.scale;
  out.image = warp_raster(sample.image, sample.image.width, sample.image.height, a, b, draw.scale,
                          draw.translation_mm.z() / (0.5 * config.cube_size_mm));
  return out;
}

ProcessedSample augment(const ProcessedSample& sample, Rng& rng, const PipelineConfig& config) {
  return augment(sample, draw_augmentation(rng), config);
}

CropResult crop_recenter_raster(const Raster& image, const Vec3& t_est, const PipelineConfig& config) {
  require(image.width == config.image_size && image.height == config.image_size,
          "crop_recenter_raster: unexpected image size");
  require(t_est.allFinite(), "crop_recenter_raster: t must be finite");
  const double px = config.pixel_mm();
  const int margin = (config.image_size - config.crop_size) / 2;
  CropResult res;
  int shift[2];
  for (int i = 0; i < 2; ++i) {
    const long s = std::lround(t_est[i] / px);
    shift[i] = static_cast<int>(std::clamp<long>(s, -margin, margin));
    if (shift[i] != s) res.clamped = true;
  }
  res.t_applied = Vec3(shift[0] * px, shift[1] * px, t_est.z());
  const double dz = t_est.z() / (0.5 * config.cube_size_mm);
  res.image = Raster(config.crop_size, config.crop_size);
  for (int v = 0; v < config.crop_size; ++v) {
    for (int u = 0; u < config.crop_size; ++u) {
      const int su = margin + shift[0] + u, sv = margin + shift[1] + v;
      if (image.is_background(su, sv)) continue;
      res.image.at(u, v) = std::min(clamp_unit(image.at(su, sv) - dz), std::nextafter(1.0f, 0.0f));
    }
  }
  return res;
}

Raster rotate_raster(const Raster& image, double alpha) {
  const Eigen::Matrix2d a = rot_z(alpha).topLeftCorner<2, 2>();
  return warp_raster(image, image.width, image.height, a, Eigen::Vector2d::Zero(), 1.0, 0.0);
}

Raster rescale_raster(const Raster& image, double s) {
  require(std::isfinite(s) && s > 0.0, "rescale_raster: scale must be positive");
  return warp_raster(image, image.width, image.height, s * Eigen::Matrix2d::Identity(), Eigen::Vector2d::Zero(),
                     1.0 / s, 0.0);
}

Raster downsample(const Raster& image, int factor) {
  require(factor >= 1, "downsample: factor must be >= 1");
  if (factor == 1) return image;
  Raster out(image.width / factor, image.height / factor);
  const double inv = 1.0 / (factor * factor);
  for (int v = 0; v < out.height; ++v) {
    for (int u = 0; u < out.width; ++u) {
      double acc = 0.0;
      for (int dv = 0; dv < factor; ++dv) {
        for (int du = 0; du < factor; ++du) acc += image.at(u * factor + du, v * factor + dv);
      }
      out.at(u, v) = static_cast<float>(acc * inv);
    }
  }
  return out;
}

NormalizedImage normalize_image(const ProcessedSample& sample, const TransformParams& params,
                                const PipelineConfig& config) {
  NormalizedImage out;
  CropResult crop = crop_recenter_raster(sample.image, params.t, config);
  out.clamped = crop.clamped;
  out.image = rescale_raster(rotate_raster(crop.image, params.alpha_z), params.s);
  out.state = sample.state;
  out.state.t = crop.t_applied;
  out.state.alpha_z = params.alpha_z;
  out.state.s = params.s;
  return out;
}

}  // namespace handkin
