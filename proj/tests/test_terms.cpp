#include <gtest/gtest.h>

#include <random>

#include "helpers.hpp"

using namespace flowdeblur;

TEST(Compose, ConstantTranslationsAddExactly) {
  const FlowField a(16, 12, 1.25, -0.5);
  const FlowField b(16, 12, -3.0, 2.0);
  const FlowField c = compose_flow(a, b);
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 16; ++x) {
      const double px = x + 1.25;
      const double py = y - 0.5;
      if (!inside_frame(16, 12, px, py)) continue;
      EXPECT_EQ(c.at(x, y).x, 1.25 + -3.0);
      EXPECT_EQ(c.at(x, y).y, -0.5 + 2.0);
    }
}

TEST(Compose, OffsetFlowChainsUnitFlows) {
  std::mt19937_64 rng(21);
  const auto seq = fdtest::translating_sequence(rng, 20, 20, 5, 1.0, 0.5);
  SequenceState st = SequenceState::from_blurry(seq.frames, 1.0);
  st.fwd = seq.fwd;
  st.bwd = seq.bwd;
  const FlowField f = offset_flow(st, 1, 2);
  EXPECT_EQ(f.at(5, 5).x, 2.0);
  EXPECT_EQ(f.at(5, 5).y, 1.0);
  const FlowField b = offset_flow(st, 3, -2);
  EXPECT_EQ(b.at(5, 5).x, -2.0);
  EXPECT_THROW(offset_flow(st, 4, 1), Error);
  EXPECT_THROW(offset_flow(st, 0, 0), Error);
}

TEST(Temporal, AdjointMatchesDenseTranspose) {
  std::mt19937_64 rng(22);
  const int w = 7;
  const int h = 6;
  const FlowField flow = fdtest::smooth_flow(rng, w, h, 2.0);
  std::vector<double> vis(static_cast<std::size_t>(w * h));
  for (std::size_t k = 0; k < vis.size(); ++k) vis[k] = (k % 3) * 0.5;
  const std::vector<const std::vector<double>*> cases{nullptr, &vis};
  for (const std::vector<double>* v : cases) {
    const int n = w * h;
    Eigen::MatrixXd d(n, 2 * n);
    for (int j = 0; j < 2 * n; ++j) {
      Image a(w, h);
      Image b(w, h);
      (j < n ? a : b).data[static_cast<std::size_t>(j % n)] = 1.0;
      d.col(j) = fdtest::to_vec(temporal_difference(a, b, flow, 1, v));
    }
    Eigen::MatrixXd dt(2 * n, n);
    for (int j = 0; j < n; ++j) {
      Image r(w, h);
      r.data[static_cast<std::size_t>(j)] = 1.0;
      const StackedPair p = temporal_difference_adjoint(r, flow, 1, v);
      dt.col(j) << fdtest::to_vec(p.first), fdtest::to_vec(p.second);
    }
    EXPECT_LT((d.transpose() - dt).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Temporal, ExactCorrespondenceGivesZero) {
  std::mt19937_64 rng(23);
  const auto seq = fdtest::translating_sequence(rng, 24, 20, 2, 2.0, 1.0);
  const Image d = temporal_difference(seq.frames[0], seq.frames[1], seq.fwd[0]);
  for (double v : d.data) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Temporal, OutOfFrameCorrespondencesAreMasked) {
  const Image a(8, 8, 1, 1.0);
  const Image b(8, 8, 1, 0.0);
  const Image d = temporal_difference(a, b, FlowField(8, 8, 3.0, 0.0));
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) EXPECT_EQ(d.at(x, y), x + 3 <= 7 ? 1.0 : 0.0);
}

TEST(EdgeMap, RangeAndFlatRegions) {
  std::mt19937_64 rng(24);
  const Image img = fdtest::random_image(rng, 16, 16);
  const EdgeMap g = compute_edge_map(img, 20.0, 25.0 / 255.0);
  for (double v : g.g) {
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, 20.0);
  }
  const EdgeMap flat = compute_edge_map(Image(5, 5, 1, 0.3), 20.0, 25.0 / 255.0);
  for (double v : flat.g) EXPECT_EQ(v, 20.0);
}

TEST(EdgeMap, StrongEdgeSuppressesSmoothing) {
  Image img(6, 1);
  img.data = {0.0, 0.0, 0.0, 1.0, 1.0, 1.0};
  const EdgeMap g = compute_edge_map(img, 20.0, 25.0 / 255.0);
  EXPECT_LT(g.g[2], 1e-10);
  EXPECT_EQ(g.g[0], 20.0);
}

namespace {

SequenceState demo_state(bool sharp, std::vector<Image>* truth = nullptr) {
  SceneSpec spec = SceneSpec::demo();
  spec.width = 32;
  spec.height = 32;
  spec.objects[0].size = {10.0, 10.0};
  spec.objects[0].position = {20.0, 16.0};
  const SyntheticScene scene = render_scene(spec);
  const auto blurry = synthesize_blur(scene);
  SequenceState st = SequenceState::from_blurry(blurry, scene.tau);
  st.fwd = scene.gt_fwd;
  st.bwd = scene.gt_bwd;
  st.blur_samples = 3;
  if (sharp) st.latent = scene.sharp;
  if (truth) *truth = scene.sharp;
  return st;
}

}  // namespace

TEST(Energy, DataTermIsLinearInLambda) {
  const SequenceState st = demo_state(false);
  SolverParams p;
  const EnergyTerms a = energy_terms(st, p);
  p.lambda *= 2.0;
  const EnergyTerms b = energy_terms(st, p);
  EXPECT_NEAR(b.data, 2.0 * a.data, 1e-9 * std::max(a.data, 1.0));
  EXPECT_EQ(b.temporal, a.temporal);
  EXPECT_EQ(b.spatial_latent, a.spatial_latent);
  EXPECT_EQ(b.spatial_flow, a.spatial_flow);
}

TEST(Energy, GroundTruthBeatsBlurryInitialization) {
  SequenceState truth = demo_state(true);
  SequenceState blurry = demo_state(false);
  assign_visibility(truth, 2);
  blurry.visibility = truth.visibility;
  blurry.visibility_neighbors = truth.visibility_neighbors;
  const SolverParams p;
  EXPECT_LT(total_energy(truth, p), total_energy(blurry, p));
}

TEST(Energy, TemporalTermVanishesWhenDisabled) {
  const SequenceState st = demo_state(false);
  SolverParams p;
  p.temporal_enabled = false;
  EXPECT_EQ(energy_terms(st, p).temporal, 0.0);
}

TEST(Energy, ThreadCountDoesNotChangeEnergy) {
  SequenceState st = demo_state(false);
  SolverParams p;
  const double e1 = total_energy(st, p);
  p.threads = 4;
  EXPECT_EQ(total_energy(st, p), e1);
}
