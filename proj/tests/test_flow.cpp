#include <gtest/gtest.h>

#include <random>

#include "helpers.hpp"

using namespace flowdeblur;

namespace {

// Multi-frame instance with smooth random flows; latent frames differ from
// the blurry ones so both parts of rho are active.
SequenceState rho_instance(std::mt19937_64& rng, int size, int frames) {
  std::vector<Image> blurry;
  for (int i = 0; i < frames; ++i) blurry.push_back(fdtest::smooth_image(rng, size, size, 1.2));
  SequenceState st = SequenceState::from_blurry(blurry, 0.7);
  for (int i = 0; i < frames; ++i) {
    st.latent[static_cast<std::size_t>(i)] = fdtest::smooth_image(rng, size, size, 1.2);
    if (i + 1 < frames) st.fwd[static_cast<std::size_t>(i)] = fdtest::smooth_flow(rng, size, size, 1.5);
    if (i > 0) st.bwd[static_cast<std::size_t>(i)] = fdtest::smooth_flow(rng, size, size, 1.5);
  }
  st.blur_samples = 3;
  return st;
}

// Both rho parts are piecewise smooth in u (bilinear cells, |.| kinks, frame
// hull); a pixel is smooth when no sample crosses a cell boundary within h
// and the temporal residual is away from zero.
bool smooth_point(const SequenceState& st, int i, int d, std::size_t k, double h) {
  const FlowField& u = st.unit_flow(i, d);
  const int w = st.width();
  const int x = static_cast<int>(k) % w;
  const int y = static_cast<int>(k) / w;
  auto away = [&](double v) { return std::abs(v - std::round(v)) > 4.0 * h * 2.0; };
  const KernelFlows kf = kernel_flows(st, i);
  const BlurParams bp = blur_params(st, i);
  for (int s = 0; s < bp.samples; ++s) {
    const double t = bp.sample_time(s);
    for (const FlowField* f : {&kf.fwd, &kf.bwd})
      if (!away(x + t * f->u[k]) || !away(y + t * f->v[k])) return false;
  }
  if (!away(x + u.u[k]) || !away(y + u.v[k])) return false;
  const Image res = temporal_difference(st.latent[static_cast<std::size_t>(i)],
                                        st.latent[static_cast<std::size_t>(i + d)], u);
  return std::abs(res.data[k]) > 1e-2;
}

}  // namespace

TEST(RhoGradient, MatchesCentralDifferences) {
  std::mt19937_64 rng(41);
  const double h = 1e-4;
  int checked = 0;
  for (int trial = 0; trial < 4; ++trial) {
    SequenceState st = rho_instance(rng, 16, 3);
    SolverParams p;
    for (int i = 0; i < 3; ++i)
      for (int d : {1, -1}) {
        if (!st.has_flow(i, d)) continue;
        const RhoLinearization lin = rho_gradient(st, i, d, p);
        for (std::size_t k = 0; k < st.fwd[0].pixel_count(); k += 7) {
          if (!smooth_point(st, i, d, k, h)) continue;
          for (const bool is_u : {true, false}) {
            auto& comp = is_u ? st.unit_flow(i, d).u : st.unit_flow(i, d).v;
            const double orig = comp[k];
            comp[k] = orig + h;
            const double ep = rho_value(st, i, d, p);
            comp[k] = orig - h;
            const double em = rho_value(st, i, d, p);
            comp[k] = orig;
            const double fd = (ep - em) / (2.0 * h);
            const double an = is_u ? lin.grad_u[k] : lin.grad_v[k];
            if (std::abs(fd) < 1e-6 && std::abs(an) < 1e-6) continue;
            EXPECT_LE(std::abs(an - fd), 1e-3 * std::max(std::abs(fd), 1e-2)) << "frame " << i << " dir " << d;
            ++checked;
          }
        }
      }
  }
  EXPECT_GT(checked, 50);
}

TEST(RhoGradient, ValueSumsToRho) {
  std::mt19937_64 rng(42);
  const SequenceState st = rho_instance(rng, 12, 3);
  const SolverParams p;
  const RhoLinearization lin = rho_gradient(st, 1, 1, p);
  EXPECT_NEAR(lin.total(), rho_value(st, 1, 1, p), 1e-9 * rho_value(st, 1, 1, p));
}

TEST(RhoGradient, RejectsMissingNeighbor) {
  std::mt19937_64 rng(43);
  const SequenceState st = rho_instance(rng, 8, 2);
  EXPECT_THROW(rho_gradient(st, 1, 1, SolverParams{}), Error);
  EXPECT_THROW(rho_gradient(st, 0, 2, SolverParams{}), Error);
}

TEST(ProxLinearL1, MatchesBruteForceMinimizer) {
  std::mt19937_64 rng(44);
  std::uniform_real_distribution<double> d(-2.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec2 c{d(rng), d(rng)};
    const Vec2 u0{d(rng), d(rng)};
    const Vec2 g{d(rng), d(rng)};
    const double r = d(rng);
    const double t = 0.05 + std::abs(d(rng));
    const Vec2 u = prox_linear_l1(c, u0, r, g, t);
    auto f = [&](Vec2 v) {
      return ((v.x - c.x) * (v.x - c.x) + (v.y - c.y) * (v.y - c.y)) / (2.0 * t) +
             std::abs(r + g.x * (v.x - u0.x) + g.y * (v.y - u0.y));
    };
    // The objective is convex: no perturbation may improve on the prox.
    const double fu = f(u);
    for (int k = 0; k < 40; ++k) {
      const double a = 2.0 * M_PI * k / 40.0;
      for (double s : {1e-3, 1e-2, 1e-1}) EXPECT_GE(f({u.x + s * std::cos(a), u.y + s * std::sin(a)}), fu - 1e-12);
    }
  }
}

TEST(UpdateFlow, ZeroIterationsKeepsTheFlow) {
  std::mt19937_64 rng(45);
  const SequenceState st = rho_instance(rng, 10, 2);
  const RhoLinearization lin = rho_gradient(st, 0, 1, SolverParams{});
  FlowSolveConfig cfg;
  cfg.pd_iters = 0;
  const EdgeMap g = compute_edge_map(st.latent[0], 20.0, 25.0 / 255.0);
  const FlowUpdate up = update_flow(st.fwd[0], lin, g, FlowDual{}, cfg);
  EXPECT_EQ(up.flow.u, st.fwd[0].u);
  EXPECT_EQ(up.flow.v, st.fwd[0].v);
}

TEST(UpdateFlow, DualsStayInUnitBox) {
  std::mt19937_64 rng(46);
  const SequenceState st = rho_instance(rng, 10, 2);
  const SolverParams p;
  const RhoLinearization lin = rho_gradient(st, 0, 1, p);
  const EdgeMap g = compute_edge_map(st.latent[0], p.nu, p.sigma_i);
  const FlowUpdate up = update_flow(st.fwd[0], lin, g, FlowDual{}, flow_config(p, g));
  for (const auto* comp : {&up.dual.ux, &up.dual.uy, &up.dual.vx, &up.dual.vy})
    for (double v : *comp) EXPECT_LE(std::abs(v), 1.0);
}

TEST(MedianFilter, RemovesIsolatedOutlier) {
  FlowField f(5, 5, 1.0, -1.0);
  f.set(2, 2, {9.0, 9.0});
  const FlowField m = median_filter3(f);
  EXPECT_EQ(m.at(2, 2).x, 1.0);
  EXPECT_EQ(m.at(2, 2).y, -1.0);
}

TEST(EstimateFlows, EnergyNeverIncreases) {
  std::mt19937_64 rng(47);
  SequenceState st = rho_instance(rng, 16, 4);
  SolverParams p;
  p.warps = 2;
  p.flow_pd_iters = 10;
  const auto g = edge_maps(st, p);
  DualState duals(st, p.neighbors);
  for (int call = 0; call < 2; ++call) {
    const FlowReport rep = estimate_flows(st, duals, p, g);
    EXPECT_LE(rep.energy_exit, rep.energy_entry + 1e-9);
  }
}

TEST(EstimateFlows, RecoversTranslationFromSharpFrames) {
  std::mt19937_64 rng(48);
  const auto seq = fdtest::translating_sequence(rng, 32, 32, 3, 1.5, -0.5);
  SequenceState st = SequenceState::from_blurry(seq.frames, 1.0);
  SolverParams p;
  p.lambda = 0.0;
  const auto g = edge_maps(st, p);
  DualState duals(st, p.neighbors);
  for (int k = 0; k < 6; ++k) estimate_flows(st, duals, p, g);
  const PixelMask mask = interior_mask(32, 32, 4);
  EXPECT_LT(epe(st.fwd[0], seq.fwd[0], mask), 0.2);
  EXPECT_LT(epe(st.bwd[2], seq.bwd[2], mask), 0.2);
}
