#pragma once

// Optical flow subproblem with latent frames fixed. The fidelity rho (blur
// data term of the source frame plus the L1 brightness-constancy term) is
// linearized around the current flow: the data term by its gradient, the
// brightness-constancy term by its residual inside the absolute value. The
// resulting convex problem with weighted TV is stepped with primal-dual
// updates, the L1 part through its exact proximal map. Each relinearization
// is accepted only if the full objective does not increase.

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "blur.hpp"
#include "core.hpp"
#include "terms.hpp"

namespace flowdeblur {

struct RhoLinearization {
  int width = 0;
  int height = 0;
  std::vector<double> value;   // per-pixel rho(x, u0)
  std::vector<double> grad_u;  // d rho / d u
  std::vector<double> grad_v;  // d rho / d v
  std::vector<double> data_grad_u;  // data-term part of grad_u
  std::vector<double> data_grad_v;
  // Brightness constancy linearized per channel as
  //   weight * |res + gx (u - u0) + gy (v - v0)|, indexed pixel * channels + c.
  int channels = 1;
  std::vector<double> weight;  // per pixel, 0 where the term is absent
  std::vector<double> res;
  std::vector<double> gx;
  std::vector<double> gy;

  [[nodiscard]] double total() const {
    double s = 0.0;
    for (double v : value) s += v;
    return s;
  }
};

inline double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Value and gradient of rho with respect to the unit flow u_{i->i+direction},
// evaluated at the flows stored in st.
inline RhoLinearization rho_gradient(const SequenceState& st, int i, int direction, const SolverParams& p) {
  if (direction != 1 && direction != -1)
    throw Error("rho_gradient: only unit offsets are free variables (|n| = 1)");
  if (!st.has_flow(i, direction)) throw Error("rho_gradient: frame has no neighbor in that direction");
  const int w = st.width();
  const int h = st.height();
  const int nc = st.channels();
  const std::size_t npx = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  RhoLinearization lin;
  lin.width = w;
  lin.height = h;
  lin.channels = nc;
  lin.value.assign(npx, 0.0);
  lin.grad_u.assign(npx, 0.0);
  lin.grad_v.assign(npx, 0.0);
  lin.weight.assign(npx, 0.0);
  lin.res.assign(npx * static_cast<std::size_t>(nc), 0.0);
  lin.gx.assign(npx * static_cast<std::size_t>(nc), 0.0);
  lin.gy.assign(npx * static_cast<std::size_t>(nc), 0.0);
  const Image& li = st.latent[static_cast<std::size_t>(i)];
  const FlowField& u = st.unit_flow(i, direction);

  if (p.lambda != 0.0) {
    const KernelFlows kf = kernel_flows(st, i);
    const BlurParams bp = blur_params(st, i);
    const Image reblurred = apply_blur(li, kf.fwd, kf.bwd, bp, p.threads);
    Image residual = reblurred;
    const Image& b = st.blurry[static_cast<std::size_t>(i)];
    for (std::size_t k = 0; k < residual.data.size(); ++k) residual.data[k] -= b.data[k];
    for (Derivative d : kDerivatives) {
      const Image dr = apply_derivative(d, residual);
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          for (int c = 0; c < nc; ++c) {
            const double v = dr.at(x, y, c);
            lin.value[u.index(x, y)] += p.lambda * v * v;
          }
    }
    const Image wres = derivative_normal(residual);
    const double norm = 1.0 / (2.0 * bp.samples);
    // The variable enters the direct segment and, for a boundary frame, the
    // mirrored segment with opposite sign.
    const bool mirrored = direction > 0 ? kf.bwd_mirrored : kf.fwd_mirrored;
    parallel::for_rows(h, p.threads, [&](int y0, int y1) {
      for (int y = y0; y < y1; ++y)
        for (int x = 0; x < w; ++x) {
          const std::size_t k = u.index(x, y);
          const double du = u.u[k];
          const double dv = u.v[k];
          double gu = 0.0;
          double gv = 0.0;
          for (int c = 0; c < nc; ++c) {
            double ju = 0.0;
            double jv = 0.0;
            for (int s = 0; s < bp.samples; ++s) {
              const double t = bp.sample_time(s);
              const Vec2 g = sample_bilinear_gradient(li, x + t * du, y + t * dv, c);
              ju += t * g.x;
              jv += t * g.y;
              if (mirrored) {
                const Vec2 gm = sample_bilinear_gradient(li, x - t * du, y - t * dv, c);
                ju -= t * gm.x;
                jv -= t * gm.y;
              }
            }
            const double wr = wres.at(x, y, c);
            gu += wr * ju * norm;
            gv += wr * jv * norm;
          }
          lin.grad_u[k] += 2.0 * p.lambda * gu;
          lin.grad_v[k] += 2.0 * p.lambda * gv;
        }
    });
  }

  lin.data_grad_u = lin.grad_u;
  lin.data_grad_v = lin.grad_v;

  const double mu = p.mu_at(direction);
  if (p.temporal_enabled && mu != 0.0) {
    const Image& lj = st.latent[static_cast<std::size_t>(i + direction)];
    const std::vector<double>* vis = st.visibility_at(i, direction);
    parallel::for_rows(h, p.threads, [&](int y0, int y1) {
      for (int y = y0; y < y1; ++y)
        for (int x = 0; x < w; ++x) {
          const std::size_t k = u.index(x, y);
          const double px = x + u.u[k];
          const double py = y + u.v[k];
          if (!inside_frame(w, h, px, py)) continue;
          const double wmu = vis ? mu * (*vis)[k] : mu;
          if (wmu == 0.0) continue;
          lin.weight[k] = wmu;
          for (int c = 0; c < nc; ++c) {
            const double r = li.at(x, y, c) - sample_bilinear(lj, px, py, c);
            lin.value[k] += wmu * std::abs(r);
            const Vec2 g = sample_bilinear_gradient(lj, px, py, c);
            const std::size_t kc = k * static_cast<std::size_t>(nc) + static_cast<std::size_t>(c);
            lin.res[kc] = r;
            lin.gx[kc] = -g.x;
            lin.gy[kc] = -g.y;
            const double sg = sign_of(r);
            lin.grad_u[k] -= wmu * sg * g.x;
            lin.grad_v[k] -= wmu * sg * g.y;
          }
        }
    });
  }
  return lin;
}

// Sum of rho for u_{i->i+direction} at the flows stored in st.
inline double rho_value(const SequenceState& st, int i, int direction, const SolverParams& p) {
  double e = 0.0;
  if (p.lambda != 0.0) e += frame_data_energy(st, i, st.latent[static_cast<std::size_t>(i)], p);
  const double mu = p.mu_at(direction);
  if (p.temporal_enabled && mu != 0.0)
    e += mu * l1_norm(temporal_difference(st.latent[static_cast<std::size_t>(i)],
                                          st.latent[static_cast<std::size_t>(i + direction)],
                                          st.unit_flow(i, direction), p.threads, st.visibility_at(i, direction)));
  return e;
}

// ---------------------------------------------------------------------------
// Primal-dual steps on the linearized problem.

struct FlowSolveConfig {
  double eta = 1.0 / std::sqrt(8.0);
  double eps = 1.0 / std::sqrt(8.0);
  int pd_iters = 30;
};

inline FlowSolveConfig flow_config(const SolverParams& p, const EdgeMap& g) {
  FlowSolveConfig cfg;
  cfg.pd_iters = p.flow_pd_iters;
  const double gmax = g.max();
  const double base = 1.0 / (std::sqrt(8.0) * (gmax > 0.0 ? gmax : 1.0));
  cfg.eta = p.eta_flow > 0.0 ? p.eta_flow : base;
  cfg.eps = p.eps_flow > 0.0 ? p.eps_flow : base;
  return cfg;
}

struct FlowUpdate {
  FlowField flow;
  FlowDual dual;
};

// Minimizer of (1/2t) |u - c|^2 + |r + g . (u - u0)| over u (thresholding).
inline Vec2 prox_linear_l1(Vec2 c, Vec2 u0, double r, Vec2 g, double t) {
  const double g2 = g.x * g.x + g.y * g.y;
  if (g2 == 0.0) return c;
  const double rc = r + g.x * (c.x - u0.x) + g.y * (c.y - u0.y);
  double step;
  if (rc < -t * g2) {
    step = t;
  } else if (rc > t * g2) {
    step = -t;
  } else {
    step = -rc / g2;
  }
  return {c.x + step * g.x, c.y + step * g.y};
}

//   p <- clip(p + eta * G A u, [-1, 1])
//   u <- prox_{eps |brightness constancy|}(u - eps * (G A)^T p - eps * grad data(u0))
inline FlowUpdate update_flow(const FlowField& u0, const RhoLinearization& lin, const EdgeMap& edge,
                              const FlowDual& dual, const FlowSolveConfig& cfg) {
  if (lin.width != u0.width || lin.height != u0.height || edge.width != u0.width || edge.height != u0.height)
    throw DimensionMismatch("update_flow: shapes differ");
  const int w = u0.width;
  const int h = u0.height;
  FlowUpdate out{u0, dual.empty() ? FlowDual(u0.pixel_count()) : dual};
  FlowField& u = out.flow;
  FlowDual& pd = out.dual;
  std::vector<double> div_u(u.pixel_count());
  std::vector<double> div_v(u.pixel_count());
  auto clip = [](double v) { return std::clamp(v, -1.0, 1.0); };
  for (int m = 0; m < cfg.pd_iters; ++m) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t k = u.index(x, y);
        const double g = edge.g[k];
        const std::size_t kr = x + 1 < w ? u.index(x + 1, y) : k;
        const std::size_t kd = y + 1 < h ? u.index(x, y + 1) : k;
        pd.ux[k] = clip(pd.ux[k] + cfg.eta * g * (u.u[kr] - u.u[k]));
        pd.uy[k] = clip(pd.uy[k] + cfg.eta * g * (u.u[kd] - u.u[k]));
        pd.vx[k] = clip(pd.vx[k] + cfg.eta * g * (u.v[kr] - u.v[k]));
        pd.vy[k] = clip(pd.vy[k] + cfg.eta * g * (u.v[kd] - u.v[k]));
      }
    // (G A)^T p = A^T (g p), forward-difference adjoint.
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const std::size_t k = u.index(x, y);
        const double g = edge.g[k];
        double au = 0.0;
        double av = 0.0;
        if (x + 1 < w) {
          au -= g * pd.ux[k];
          av -= g * pd.vx[k];
        }
        if (x >= 1) {
          const std::size_t kl = u.index(x - 1, y);
          au += edge.g[kl] * pd.ux[kl];
          av += edge.g[kl] * pd.vx[kl];
        }
        if (y + 1 < h) {
          au -= g * pd.uy[k];
          av -= g * pd.vy[k];
        }
        if (y >= 1) {
          const std::size_t ku = u.index(x, y - 1);
          au += edge.g[ku] * pd.uy[ku];
          av += edge.g[ku] * pd.vy[ku];
        }
        div_u[k] = au;
        div_v[k] = av;
      }
    for (std::size_t k = 0; k < u.u.size(); ++k) {
      Vec2 c{u.u[k] - cfg.eps * (div_u[k] + lin.data_grad_u[k]), u.v[k] - cfg.eps * (div_v[k] + lin.data_grad_v[k])};
      if (lin.weight[k] > 0.0) {
        const Vec2 base{u0.u[k], u0.v[k]};
        for (int ch = 0; ch < lin.channels; ++ch) {
          const std::size_t kc = k * static_cast<std::size_t>(lin.channels) + static_cast<std::size_t>(ch);
          c = prox_linear_l1(c, base, lin.res[kc], {lin.gx[kc], lin.gy[kc]}, cfg.eps * lin.weight[k]);
        }
      }
      u.u[k] = c.x;
      u.v[k] = c.y;
    }
  }
  return out;
}

inline FlowField median_filter3(const FlowField& f) {
  FlowField out(f.width, f.height);
  std::array<double, 9> win{};
  for (const bool is_u : {true, false}) {
    const std::vector<double>& src = is_u ? f.u : f.v;
    std::vector<double>& dst = is_u ? out.u : out.v;
    for (int y = 0; y < f.height; ++y)
      for (int x = 0; x < f.width; ++x) {
        int n = 0;
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            win[static_cast<std::size_t>(n++)] =
                src[f.index(std::clamp(x + dx, 0, f.width - 1), std::clamp(y + dy, 0, f.height - 1))];
        std::nth_element(win.begin(), win.begin() + 4, win.end());
        dst[f.index(x, y)] = win[4];
      }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Guarded estimation.

// Terms of the full objective that depend on u_{i->i+direction}: the data
// term of frame i, temporal terms whose flow chain passes through that unit
// flow, and its weighted TV.
inline double local_energy(const SequenceState& st, const SolverParams& p, const std::vector<EdgeMap>& g, int i,
                           int direction) {
  double e = frame_data_energy(st, i, st.latent[static_cast<std::size_t>(i)], p);
  e += flow_tv(st.unit_flow(i, direction), g[static_cast<std::size_t>(i)]);
  if (!p.temporal_enabled) return e;
  for (int a = 1; a <= p.neighbors; ++a) {
    const int n = a * direction;
    const double mu = p.mu_at(n);
    if (mu == 0.0) continue;
    // Start frames j whose chain j -> j+n uses the step i -> i+direction.
    for (int k = 0; k < a; ++k) {
      const int j = i - k * direction;
      if (j < 0 || j >= st.frames() || j + n < 0 || j + n >= st.frames()) continue;
      e += mu * l1_norm(temporal_difference(st.latent[static_cast<std::size_t>(j)],
                                            st.latent[static_cast<std::size_t>(j + n)], offset_flow(st, j, n),
                                            p.threads, st.visibility_at(j, n)));
    }
  }
  return e;
}

struct FlowReport {
  int accepted = 0;
  int rejected = 0;
  double energy_entry = 0.0;
  double energy_exit = 0.0;
};

inline constexpr int kFlowBacktracks = 6;

// Relinearize and step every unit flow `warps` times. A step is accepted only
// when the objective does not increase; otherwise the step size is halved and
// retried, and after kFlowBacktracks failures the previous flow is kept.
inline FlowReport estimate_flows(SequenceState& st, DualState& duals, const SolverParams& p,
                                 const std::vector<EdgeMap>& g) {
  FlowReport rep;
  rep.energy_entry = energy_terms(st, p, g).total();
  const int t = st.frames();
  std::vector<std::array<double, 2>> step_scale(static_cast<std::size_t>(t), {1.0, 1.0});
  for (int warp = 0; warp < p.warps; ++warp) {
    for (int i = 0; i < t; ++i) {
      for (int d : {1, -1}) {
        if (!st.has_flow(i, d)) continue;
        double& scale = step_scale[static_cast<std::size_t>(i)][d > 0 ? 1 : 0];
        const RhoLinearization lin = rho_gradient(st, i, d, p);
        const FlowSolveConfig base = flow_config(p, g[static_cast<std::size_t>(i)]);
        FlowField& slot = st.unit_flow(i, d);
        const FlowField previous = slot;
        const double e0 = local_energy(st, p, g, i, d);
        bool accepted = false;
        for (int attempt = 0; attempt <= kFlowBacktracks; ++attempt) {
          FlowSolveConfig cfg = base;
          cfg.eps *= scale;
          FlowUpdate upd = update_flow(previous, lin, g[static_cast<std::size_t>(i)], duals.p_at(i, d), cfg);
          slot = median_filter3(upd.flow);
          const double e1 = local_energy(st, p, g, i, d);
          if (e1 <= e0 && all_finite(slot)) {
            duals.p_at(i, d) = std::move(upd.dual);
            accepted = true;
            scale = std::min(1.0, 2.0 * scale);
            break;
          }
          scale *= 0.5;
        }
        if (accepted) {
          ++rep.accepted;
        } else {
          slot = previous;
          ++rep.rejected;
        }
      }
    }
  }
  rep.energy_exit = energy_terms(st, p, g).total();
  return rep;
}

}  // namespace flowdeblur
