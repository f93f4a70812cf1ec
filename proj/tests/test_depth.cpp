#include <algorithm>
#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "handkin/depth.hpp"
#include "handkin/renderer.hpp"
#include "test_util.hpp"

using namespace handkin;

namespace {

const KinematicTopology& topo() {
  static const KinematicTopology t = KinematicTopology::default_topology();
  return t;
}

// Foreground centroid in pixel coordinates and mean foreground value.
struct Blob {
  Eigen::Vector2d centre = Eigen::Vector2d::Zero();
  double value = 0.0;
  int count = 0;
};

Blob blob_of(const Raster& r) {
  Blob b;
  for (int v = 0; v < r.height; ++v) {
    for (int u = 0; u < r.width; ++u) {
      if (r.is_background(u, v)) continue;
      b.centre += Eigen::Vector2d(u, v);
      b.value += r.at(u, v);
      ++b.count;
    }
  }
  if (b.count) {
    b.centre /= b.count;
    b.value /= b.count;
  }
  return b;
}

// Pixel coordinate of an x (or y) value in mm on a raster of the given pitch.
double to_px(double x_mm, int size, double pitch) { return x_mm / pitch + 0.5 * (size - 1); }

ProcessedSample disc_sample(const Vec3& centre, double radius, const PipelineConfig& cfg) {
  std::vector<Vec3> pts;
  for (double x = -radius; x <= radius; x += 0.25) {
    for (double y = -radius; y <= radius; y += 0.25) {
      if (x * x + y * y <= radius * radius) pts.push_back(centre + Vec3(x, y, 0));
    }
  }
  ProcessedSample s;
  s.image = render_points_to_image(pts, cfg.image_size, cfg.cube_size_mm);
  return s;
}

}  // namespace

TEST(Intrinsics, ProjectBackProjectRoundTrip) {
  const Intrinsics k;
  const Vec3 p(35.0, -20.0, 410.0);
  const Eigen::Vector2d uv = k.project(p);
  EXPECT_NEAR(uv.x(), 300.0 * 35.0 / 410.0 + 160.0, 1e-12);
  EXPECT_TRUE(k.back_project(uv.x(), uv.y(), p.z()).isApprox(p, 1e-14));
  Intrinsics bad;
  bad.fx = -1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(ComputeCom, NearClusterDepthAndBoxCentre) {
  DepthFrame f(320, 240, Intrinsics{});
  JointSet j;
  for (int k = 0; k < kNumJoints; ++k) j[k] = Vec3(-40 + 4 * k, -30 + 3 * k, 400);
  // Foreground at 400 mm over most of the box, a far background behind.
  for (int v = 0; v < 240; ++v) {
    for (int u = 0; u < 320; ++u) f.at(u, v) = (u < 160) ? 400.0f : 900.0f;
  }
  const Vec3 com = compute_com(j, f);
  EXPECT_NEAR(com.z(), 400.0, 1e-9);
  const Eigen::Vector2d uv = f.intrinsics.project(com);
  const Eigen::Vector2d lo = f.intrinsics.project(j[0]), hi = f.intrinsics.project(j[20]);
  EXPECT_NEAR(uv.x(), 0.5 * (lo.x() + hi.x()), 1e-9);
  EXPECT_NEAR(uv.y(), 0.5 * (lo.y() + hi.y()), 1e-9);

  DepthFrame empty(320, 240, Intrinsics{});
  EXPECT_THROW(compute_com(j, empty), DegenerateInputError);
}

TEST(ExtractCube, KeepsOnlyPointsInsideTheCube) {
  DepthFrame f(320, 240, Intrinsics{});
  f.at(160, 120) = 400.0f;
  f.at(161, 120) = 700.0f;  // behind the cube
  f.at(10, 10) = 400.0f;    // far to the side
  const auto pts = extract_cube(f, Vec3(0, 0, 400), 300.0);
  ASSERT_EQ(pts.size(), 1u);
  EXPECT_NEAR(pts[0].z(), 400.0, 1e-9);
}

TEST(RenderPoints, OrthographicDepthNormalized) {
  const std::vector<Vec3> pts{Vec3(0.1, 0.1, -30.0), Vec3(0.1, 0.1, 20.0), Vec3(500, 0, 0)};
  const Raster img = render_points_to_image(pts, 176, 300.0);
  const int c = 88;  // floor((0.1 + 150) / (300 / 176))
  EXPECT_FLOAT_EQ(img.at(c, c), static_cast<float>(-30.0 / 150.0));
  int fg = 0;
  for (float x : img.data) fg += x < Raster::kBackground;
  EXPECT_EQ(fg, 1);
}

TEST(MedianFilter, ForegroundOnly) {
  Raster r(5, 5);
  for (int v = 1; v <= 3; ++v) {
    for (int u = 1; u <= 3; ++u) r.at(u, v) = 0.1f;
  }
  r.at(2, 2) = 0.9f;
  const Raster m = median_filter3(r);
  EXPECT_FLOAT_EQ(m.at(2, 2), 0.1f);
  EXPECT_EQ(m.at(0, 0), Raster::kBackground);
  EXPECT_FLOAT_EQ(m.at(1, 1), 0.1f);
}

TEST(WarpRaster, IdentityIsExact) {
  const PipelineConfig cfg;
  const ProcessedSample s = disc_sample(Vec3(10, -20, -5), 12.0, cfg);
  const Raster w = warp_raster(s.image, s.image.width, s.image.height, Eigen::Matrix2d::Identity(),
                               Eigen::Vector2d::Zero(), 1.0, 0.0);
  EXPECT_EQ(w, s.image);
}

TEST(Augmentation, ImageJointsAndStateStayConsistent) {
  const PipelineConfig cfg;
  const Vec3 centre(20, -10, -8);
  ProcessedSample s = disc_sample(centre, 10.0, cfg);
  for (int k = 0; k < kNumJoints; ++k) s.joints_gt[k] = centre;
  s.state.t = centre;
  s.state.alpha_z = 0.3;
  s.state.s = 1.05;
  AugmentationDraw d;
  d.scale = 1.2;
  d.rotation_rad = 0.8;
  d.translation_mm = Vec3(6, -4, 3);
  const ProcessedSample a = augment(s, d, cfg);
  const Vec3 expect = rot_z(0.8) * (1.2 * centre) + d.translation_mm;
  EXPECT_TRUE(a.joints_gt[5].isApprox(expect, 1e-12));
  EXPECT_TRUE(a.state.t.isApprox(expect, 1e-12));
  EXPECT_NEAR(a.state.alpha_z, 1.1, 1e-12);
  EXPECT_NEAR(a.state.s, 1.26, 1e-12);
  const Blob b = blob_of(a.image);
  const double px = cfg.pixel_mm();
  EXPECT_NEAR(b.centre.x(), to_px(expect.x(), 176, px), 0.6);
  EXPECT_NEAR(b.centre.y(), to_px(expect.y(), 176, px), 0.6);
  EXPECT_NEAR(b.value, expect.z() / 150.0, 1e-4);
  const Blob b0 = blob_of(s.image);
  EXPECT_NEAR(static_cast<double>(b.count) / b0.count, 1.44, 0.1);
  EXPECT_EQ(a.id, "+aug");
}

TEST(Augmentation, DrawStatistics) {
  Rng rng = make_rng(42, 0, 7);
  const int n = 100000;
  double s1 = 0, s2 = 0, t2 = 0;
  std::vector<double> rot;
  for (int i = 0; i < n; ++i) {
    const AugmentationDraw d = draw_augmentation(rng);
    EXPECT_GE(d.scale, 0.75);
    EXPECT_LE(d.scale, 1.25);
    EXPECT_LE(d.translation_mm.cwiseAbs().maxCoeff(), 15.0);
    s1 += d.scale;
    s2 += d.scale * d.scale;
    t2 += d.translation_mm.x() * d.translation_mm.x();
    rot.push_back(d.rotation_rad);
  }
  const double mean = s1 / n;
  EXPECT_NEAR(mean, 1.0, 0.002);
  EXPECT_NEAR(std::sqrt(s2 / n - mean * mean), 0.075, 0.002);
  EXPECT_NEAR(std::sqrt(t2 / n), 4.0, 0.1);
  std::sort(rot.begin(), rot.end());
  double ks = 0.0;
  for (int i = 0; i < n; ++i) {
    const double f = (rot[static_cast<std::size_t>(i)] + std::numbers::pi) / (2.0 * std::numbers::pi);
    ks = std::max({ks, (i + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  EXPECT_LT(ks, 1.628 / std::sqrt(static_cast<double>(n)));
}

TEST(Augmentation, SameStreamSameDraws) {
  Rng a = make_rng(5, 3, 1), b = make_rng(5, 3, 1), c = make_rng(5, 4, 1);
  const AugmentationDraw da = draw_augmentation(a), db = draw_augmentation(b), dc = draw_augmentation(c);
  EXPECT_EQ(da.scale, db.scale);
  EXPECT_EQ(da.translation_mm, db.translation_mm);
  EXPECT_NE(da.rotation_rad, dc.rotation_rad);
}

TEST(Crop, RecentersOnWholePixelsAndClamps) {
  const PipelineConfig cfg;
  const double px = cfg.pixel_mm();
  const Vec3 centre(12 * px, -7 * px, 15);
  const ProcessedSample s = disc_sample(centre, 8.0, cfg);
  const CropResult c = crop_recenter_raster(s.image, centre + Vec3(0.2, -0.2, 0), cfg);
  EXPECT_FALSE(c.clamped);
  EXPECT_NEAR(c.t_applied.x(), 12 * px, 1e-12);
  EXPECT_NEAR(c.t_applied.y(), -7 * px, 1e-12);
  const Blob b = blob_of(c.image);
  EXPECT_NEAR(b.centre.x(), 63.5, 0.6);
  EXPECT_NEAR(b.centre.y(), 63.5, 0.6);
  EXPECT_NEAR(b.value, 0.0, 1e-5);

  const CropResult far = crop_recenter_raster(s.image, Vec3(100, 0, 0), cfg);
  EXPECT_TRUE(far.clamped);
  EXPECT_NEAR(far.t_applied.x(), 24 * px, 1e-12);
}

TEST(RotateRescale, MovesBlobAsExpected) {
  const PipelineConfig cfg;
  const double px = cfg.pixel_mm();
  const ProcessedSample s = disc_sample(Vec3(30, 0, -10), 6.0, cfg);
  const CropResult c = crop_recenter_raster(s.image, Vec3::Zero(), cfg);
  const Raster r = rotate_raster(c.image, std::numbers::pi / 2);
  // Points p -> Rz(-alpha) p: (30, 0) -> (0, -30).
  const Blob b = blob_of(r);
  EXPECT_NEAR(b.centre.x(), to_px(0.0, 128, px), 0.6);
  EXPECT_NEAR(b.centre.y(), to_px(-30.0, 128, px), 0.6);
  const Raster sc = rescale_raster(c.image, 2.0);
  const Blob bs = blob_of(sc);
  EXPECT_NEAR(bs.centre.x(), to_px(15.0, 128, px), 0.6);
  EXPECT_NEAR(bs.value, -10.0 / 150.0 / 2.0, 1e-4);
  EXPECT_THROW(rescale_raster(c.image, 0.0), std::invalid_argument);
}

TEST(Downsample, AveragesBlocks) {
  Raster r(4, 4, 0.0f);
  r.at(0, 0) = 1.0f;
  const Raster d = downsample(r, 2);
  EXPECT_EQ(d.width, 2);
  EXPECT_FLOAT_EQ(d.at(0, 0), 0.25f);
  EXPECT_FLOAT_EQ(d.at(1, 1), 0.0f);
}

TEST(PreprocessFrame, RenderedHandEndToEnd) {
  const auto profiles = default_profiles();
  const GeneratorConfig gc;
  const PipelineConfig cfg;
  const SyntheticSample s = make_synthetic_sample(3, 10, profiles, 42, topo(), gc);
  const ProcessedSample p = preprocess_frame(s.frame, s.joints, topo(), cfg, s.id);
  EXPECT_NEAR((p.state.r_cam * p.state.com).head<2>().norm(), 0.0, 1e-9);
  EXPECT_LT(test::max_joint_diff(postprocess_to_camera(p.joints_gt, p.state), s.joints), 1e-9);
  // The middle MCP sits under hand pixels.
  const Vec3 mcp = p.joints_gt.at(Finger::M, JointType::MCP);
  const int u = static_cast<int>(std::floor((mcp.x() + 150.0) / cfg.pixel_mm()));
  const int v = static_cast<int>(std::floor((mcp.y() + 150.0) / cfg.pixel_mm()));
  int fg = 0;
  for (int dv = -2; dv <= 2; ++dv) {
    for (int du = -2; du <= 2; ++du) fg += !p.image.is_background(u + du, v + dv);
  }
  EXPECT_GT(fg, 0);
  EXPECT_EQ(p.state.t, mcp);
  const NormalizedImage n = normalize_image(p, gt_transform_params(p.joints_gt, topo()), cfg);
  EXPECT_EQ(n.image.width, cfg.crop_size);
  EXPECT_FALSE(n.clamped);
}

TEST(RenderPoints, EmptyAndCentrePoint) {
  const Raster empty = render_points_to_image({}, 176, 300.0);
  for (float x : empty.data) EXPECT_EQ(x, Raster::kBackground);
  const Raster one = render_points_to_image(std::vector<Vec3>{Vec3(0.01, 0.01, 0)}, 176, 300.0);
  EXPECT_EQ(one.at(88, 88), 0.0f);
}

TEST(ExtractCube, SingletonIsExactBackProjection) {
  const Intrinsics k;
  DepthFrame f(320, 240, k);
  f.at(170, 115) = 420.0f;
  const Vec3 com(0, 0, 400);
  const auto pts = extract_cube(f, com, 300.0);
  ASSERT_EQ(pts.size(), 1u);
  // camera_rotation of an on-axis COM is the identity.
  EXPECT_LT((pts[0] - k.back_project(170, 115, 420)).norm(), 1e-9);
}

TEST(ComputeCom, NearClusterAgainstFarBackground) {
  DepthFrame f(320, 240, Intrinsics{});
  JointSet j;
  for (int k = 0; k < kNumJoints; ++k) j[k] = Vec3(-30 + 3 * k, -30 + 3 * k, 350);
  Rng rng = make_rng(3, 0);
  std::uniform_real_distribution<double> near(342.0, 358.0);
  for (int v = 0; v < 240; ++v) {
    for (int u = 0; u < 320; ++u) {
      if ((u + v) % 3 == 0) {
        f.at(u, v) = 2000.0f;
      } else {
        f.at(u, v) = static_cast<float>(near(rng));
      }
    }
  }
  const Vec3 com = compute_com(j, f);
  EXPECT_GE(com.z(), 340.0);
  EXPECT_LE(com.z(), 360.0);
}

TEST(Augmentation, IdentityDrawLeavesSampleUnchanged) {
  const PipelineConfig cfg;
  ProcessedSample s = disc_sample(Vec3(5, 5, 0), 9.0, cfg);
  s.id = "x";
  const ProcessedSample a = augment(s, AugmentationDraw::identity(), cfg);
  EXPECT_EQ(a.image, s.image);
  EXPECT_EQ(a.state.t, s.state.t);
  EXPECT_EQ(a.id, "x+aug");
}
