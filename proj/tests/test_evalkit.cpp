#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"

using namespace flowdeblur;

TEST(Psnr, KnownValues) {
  const Image a(4, 4, 1, 0.5);
  EXPECT_EQ(psnr(a, a), std::numeric_limits<double>::infinity());
  const Image b(4, 4, 1, 0.6);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
  EXPECT_THROW(psnr(a, Image(3, 4)), DimensionMismatch);
}

TEST(Epe, ConstantShift) {
  const FlowField gt(8, 8);
  EXPECT_DOUBLE_EQ(epe(FlowField(8, 8, 1.0, 0.0), gt), 1.0);
  EXPECT_DOUBLE_EQ(epe(FlowField(8, 8, 3.0, 4.0), gt), 5.0);
}

TEST(Epe, MaskSelectsPixels) {
  FlowField f(8, 8);
  f.set(0, 0, {10.0, 0.0});
  const PixelMask m = interior_mask(8, 8, 1);
  EXPECT_EQ(epe(f, FlowField(8, 8), m), 0.0);
  EXPECT_EQ(m[0], 0);
  EXPECT_EQ(m[9], 1);
}

TEST(InteriorMask, ExcludesMotionBoundaryBand) {
  FlowField gt(10, 10);
  for (int y = 0; y < 10; ++y)
    for (int x = 5; x < 10; ++x) gt.set(x, y, {1.0, 0.0});
  const PixelMask m = interior_mask(10, 10, 0, &gt, 1);
  EXPECT_EQ(m[5 * 10 + 4], 0);
  EXPECT_EQ(m[5 * 10 + 5], 0);
  EXPECT_EQ(m[5 * 10 + 2], 1);
  EXPECT_EQ(m[5 * 10 + 7], 1);
}

TEST(FlowColor, ZeroFlowIsWhiteAndSaturationGrows) {
  const Image white = flow_to_color(FlowField(3, 3));
  for (double v : white.data) EXPECT_EQ(v, 1.0);
  FlowField f(2, 1);
  f.set(0, 0, {0.5, 0.0});
  f.set(1, 0, {1.0, 0.0});
  const Image c = flow_to_color(f);
  EXPECT_EQ(c.channels, 3);
  double s0 = 0.0;
  double s1 = 0.0;
  for (int ch = 0; ch < 3; ++ch) {
    s0 += c.at(0, 0, ch);
    s1 += c.at(1, 0, ch);
  }
  EXPECT_GT(s0, s1);
}

TEST(Scene, DemoGroundTruth) {
  const SceneSpec spec = SceneSpec::demo();
  const SyntheticScene s = render_scene(spec);
  ASSERT_EQ(s.sharp.size(), 5u);
  EXPECT_EQ(s.tau, 0.8);
  const int cx = static_cast<int>(spec.objects[0].position.x);
  const int cy = static_cast<int>(spec.objects[0].position.y);
  EXPECT_EQ(s.gt_fwd[0].at(cx, cy).x, -3.0);
  EXPECT_EQ(s.gt_fwd[0].at(2, 2).x, 1.0);
  EXPECT_EQ(s.gt_bwd[1].at(2, 2).x, -1.0);
  EXPECT_EQ(s.gt_fwd[4].at(2, 2).x, 0.0);
  EXPECT_EQ(s.gt_bwd[0].at(2, 2).x, 0.0);
  EXPECT_EQ(s.object_mask[0][static_cast<std::size_t>(cy * spec.width + cx)], 1);
  for (const Image& f : s.sharp)
    for (double v : f.data) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
}

TEST(Scene, BackgroundPointsFollowTheirFlow) {
  SceneSpec spec;
  spec.objects.clear();
  spec.background.translation = {2.0, 1.0};
  const SyntheticScene s = render_scene(spec);
  for (int y = 10; y < 50; y += 7)
    for (int x = 10; x < 50; x += 7) EXPECT_NEAR(s.sharp[1].at(x + 2, y + 1), s.sharp[0].at(x, y), 1e-12);
}

TEST(Scene, SeedIsDeterministic) {
  const SyntheticScene a = render_scene(SceneSpec::demo());
  const SyntheticScene b = render_scene(SceneSpec::demo());
  EXPECT_EQ(a.sharp[2].data, b.sharp[2].data);
  SceneSpec other;
  other.seed = 99;
  EXPECT_NE(render_scene(other).sharp[2].data, a.sharp[2].data);
}

TEST(Scene, ValidationErrors) {
  SceneSpec s;
  s.frames = 1;
  EXPECT_THROW(render_scene(s), Error);
  s = SceneSpec{};
  s.tau = 0.0;
  EXPECT_THROW(render_scene(s), Error);
  s = SceneSpec{};
  s.objects[0].velocity = {-12.0, 0.0};
  EXPECT_THROW(render_scene(s), Error);
  s = SceneSpec{};
  s.objects[0].position = {2.0, 2.0};
  EXPECT_THROW(render_scene(s), Error);
}

TEST(Synthesis, StaticSceneIsNotBlurred) {
  SceneSpec spec;
  spec.objects.clear();
  spec.background.translation = {0.0, 0.0};
  const SyntheticScene s = render_scene(spec);
  const auto b = synthesize_blur(s);
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_EQ(b[i].data, s.sharp[i].data);
}

TEST(Synthesis, ShortExposureApproachesSharp) {
  SceneSpec spec = SceneSpec::demo();
  spec.tau = 0.02;
  const SyntheticScene s = render_scene(spec);
  EXPECT_GT(mean_psnr(synthesize_blur(s), s.sharp), 45.0);
  spec.tau = 1.0;
  const SyntheticScene l = render_scene(spec);
  EXPECT_LT(mean_psnr(synthesize_blur(l), l.sharp), 35.0);
}
