#pragma once

// Sharp-frame restoration with flows held fixed. Primal-dual iteration over
// the TV and temporal L1 terms; the quadratic data term is kept inside the
// primal step and solved by conjugate gradients.

#include <algorithm>
#include <cmath>
#include <vector>

#include "blur.hpp"
#include "core.hpp"
#include "terms.hpp"

namespace flowdeblur {

struct LatentSolveConfig {
  double eta = 1.0 / std::sqrt(8.0);           // TV dual step
  double eta_temporal = 1.0 / std::sqrt(8.0);  // temporal dual step
  double eps = 1.0 / std::sqrt(8.0);           // primal step
  int pd_iters = 30;
  int cg_iters = 30;
  double cg_tol = 1e-6;
  bool temporal_enabled = true;
};

inline void project_unit_box(Image& img) {
  for (double& v : img.data) v = std::clamp(v, -1.0, 1.0);
}

// s <- clip(s + eta * grad L, [-1, 1])
inline VectorField dual_update_spatial(const VectorField& s, const Image& latent, double eta) {
  require_same_size(s.x, latent, "dual_update_spatial");
  VectorField out = gradient(latent);
  for (std::size_t k = 0; k < out.x.data.size(); ++k) {
    out.x.data[k] = s.x.data[k] + eta * out.x.data[k];
    out.y.data[k] = s.y.data[k] + eta * out.y.data[k];
  }
  project_unit_box(out.x);
  project_unit_box(out.y);
  return out;
}

// q <- clip(q + eta * mu * D [L_i; L_j], [-1, 1])
inline Image dual_update_temporal(const Image& q, const Image& li, const Image& lj, const FlowField& flow, double mu,
                                  double eta, int threads = 1, const std::vector<double>* visibility = nullptr) {
  require_same_size(q, li, "dual_update_temporal");
  Image out = temporal_difference(li, lj, flow, threads, visibility);
  for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] = q.data[k] + eta * mu * out.data[k];
  project_unit_box(out);
  return out;
}

// Upper bound on the squared norm of the stacked temporal operator
// [mu_n D_{i,n}] from the Schur test ||K||^2 <= ||K||_1 ||K||_inf.
// max_warp_column_sum is the largest column sum of any bilinear warp involved.
inline double temporal_operator_norm_bound(const SolverParams& p, double max_warp_column_sum) {
  if (!p.temporal_enabled) return 0.0;
  double mu_max = 0.0;
  double col = 0.0;
  for (int n = -p.neighbors; n <= p.neighbors; ++n) {
    if (n == 0) continue;
    const double mu = p.mu_at(n);
    mu_max = std::max(mu_max, mu);
    col += mu * (1.0 + max_warp_column_sum);
  }
  return 2.0 * mu_max * col;
}

// Same bound for the full operator [grad; mu_n D_{i,n}] (||grad||^2 <= 8).
inline double latent_operator_norm_bound(const SolverParams& p, double max_warp_column_sum) {
  return 8.0 + temporal_operator_norm_bound(p, max_warp_column_sum);
}

inline double max_warp_column_sum(const FlowField& flow) {
  const Image ones(flow.width, flow.height, 1, 1.0);
  const StackedPair t = temporal_difference_adjoint(ones, flow);
  double m = 0.0;
  for (double v : t.second.data) m = std::max(m, -v);
  return m;
}

namespace detail {

// Offset flows u_{i->i+n}, frozen for one latent solve.
struct TemporalLinks {
  int neighbors = 0;
  std::vector<std::vector<FlowField>> flows;  // [i][n + N], empty when unused

  TemporalLinks(const SequenceState& st, const SolverParams& p) : neighbors(p.neighbors) {
    flows.resize(static_cast<std::size_t>(st.frames()));
    for (int i = 0; i < st.frames(); ++i) {
      flows[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(2 * neighbors + 1));
      if (!p.temporal_enabled) continue;
      for (int n = -neighbors; n <= neighbors; ++n)
        if (active(st, p, i, n)) flows[static_cast<std::size_t>(i)][static_cast<std::size_t>(n + neighbors)] = offset_flow(st, i, n);
    }
  }
  static bool active(const SequenceState& st, const SolverParams& p, int i, int n) {
    return p.temporal_enabled && n != 0 && i >= 0 && i < st.frames() && i + n >= 0 && i + n < st.frames() && p.mu_at(n) > 0.0;
  }
  [[nodiscard]] const FlowField& at(int i, int n) const {
    return flows[static_cast<std::size_t>(i)][static_cast<std::size_t>(n + neighbors)];
  }
};

// Data + temporal + TV of the latent frames, using the frozen links.
inline double latent_objective(const SequenceState& st, const SolverParams& p, const TemporalLinks& links) {
  double e = 0.0;
  for (int i = 0; i < st.frames(); ++i) {
    const Image& li = st.latent[static_cast<std::size_t>(i)];
    e += frame_data_energy(st, i, li, p) + image_tv(li);
    for (int n = -p.neighbors; n <= p.neighbors; ++n)
      if (TemporalLinks::active(st, p, i, n))
        e += p.mu_at(n) *
             l1_norm(temporal_difference(li, st.latent[static_cast<std::size_t>(i + n)], links.at(i, n), p.threads,
                                         st.visibility_at(i, n)));
  }
  return e;
}

}  // namespace detail

// Objective of the latent subproblem (flows fixed).
inline double latent_objective(const SequenceState& st, const SolverParams& p) {
  return detail::latent_objective(st, p, detail::TemporalLinks(st, p));
}

// Per-block dual steps with eta_b * eps * ||K_b||^2 <= 1/2 for the TV and
// temporal blocks. A primal or TV dual step given in the params fixes the
// other; giving both uses them as is for both blocks.
inline LatentSolveConfig latent_config(const SequenceState& st, const SolverParams& p) {
  LatentSolveConfig cfg;
  cfg.pd_iters = p.pd_iters;
  cfg.cg_iters = p.cg_iters;
  cfg.cg_tol = p.cg_tol;
  cfg.temporal_enabled = p.temporal_enabled;
  double col = 0.0;
  if (p.temporal_enabled)
    for (int i = 0; i < st.frames(); ++i)
      for (int n = -p.neighbors; n <= p.neighbors; ++n)
        if (detail::TemporalLinks::active(st, p, i, n)) col = std::max(col, max_warp_column_sum(offset_flow(st, i, n)));
  const double tb = temporal_operator_norm_bound(p, col);
  if (p.eta_latent > 0.0 && p.eps_latent > 0.0) {
    cfg.eta = cfg.eta_temporal = p.eta_latent;
    cfg.eps = p.eps_latent;
    return cfg;
  }
  if (p.eps_latent > 0.0)
    cfg.eps = p.eps_latent;
  else if (p.eta_latent > 0.0)
    cfg.eps = 1.0 / (16.0 * p.eta_latent);
  else
    cfg.eps = 0.25;
  cfg.eta = p.eta_latent > 0.0 ? p.eta_latent : 1.0 / (16.0 * cfg.eps);
  cfg.eta_temporal = tb > 0.0 ? 1.0 / (2.0 * tb * cfg.eps) : cfg.eta;
  return cfg;
}

// Quadratic system of the primal step for frame i:
//   (2 lambda K^T (sum_d d^T d) K + I / eps) L = 2 lambda K^T (sum_d d^T d) B + l_tilde / eps
class LatentSystem {
 public:
  LatentSystem(const SequenceState& st, int frame, double lambda, double eps, int threads)
      : st_(st), frame_(frame), lambda_(lambda), eps_(eps), threads_(threads) {}

  [[nodiscard]] Image apply(const Image& l) const {
    Image out = l;
    for (double& v : out.data) v /= eps_;
    if (lambda_ == 0.0) return out;
    const Image kl = blur_frame(st_, frame_, l, threads_);
    const Image t = blur_frame_adjoint(st_, frame_, derivative_normal(kl), threads_);
    for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] += 2.0 * lambda_ * t.data[k];
    return out;
  }

  // Upper bound on the condition number: the spectrum lies in
  // [1/eps, 1/eps + 2 lambda * 8 * ||K||_1 ||K||_inf], and the rows of K sum to 1.
  [[nodiscard]] double condition_bound() const {
    if (lambda_ == 0.0) return 1.0;
    const Image& b = st_.blurry[static_cast<std::size_t>(frame_)];
    const Image col = blur_frame_adjoint(st_, frame_, Image(b.width, b.height, b.channels, 1.0), threads_);
    const double colmax = *std::max_element(col.data.begin(), col.data.end());
    return 1.0 + 16.0 * lambda_ * eps_ * std::max(colmax, 1.0);
  }

  [[nodiscard]] Image rhs(const Image& l_tilde) const {
    Image out = l_tilde;
    for (double& v : out.data) v /= eps_;
    if (lambda_ == 0.0) return out;
    const Image t =
        blur_frame_adjoint(st_, frame_, derivative_normal(st_.blurry[static_cast<std::size_t>(frame_)]), threads_);
    for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] += 2.0 * lambda_ * t.data[k];
    return out;
  }

 private:
  const SequenceState& st_;
  int frame_;
  double lambda_;
  double eps_;
  int threads_;
};

struct CgReport {
  int iterations = 0;
  double relative_residual = 0.0;
};

// Conjugate gradients for the SPD system above, warm-started at x.
inline CgReport conjugate_gradient(const LatentSystem& sys, const Image& b, Image& x, int max_iters, double tol) {
  CgReport rep;
  Image ax = sys.apply(x);
  Image r = b;
  for (std::size_t k = 0; k < r.data.size(); ++k) r.data[k] -= ax.data[k];
  const double bnorm = std::sqrt(dot(b, b));
  const double scale = bnorm > 0.0 ? bnorm : 1.0;
  double rr = dot(r, r);
  const double rr0 = rr;
  const double kappa = sys.condition_bound();
  rep.relative_residual = std::sqrt(rr) / scale;
  if (rep.relative_residual <= tol) return rep;
  Image pdir = r;
  int growth = 0;
  for (int it = 0; it < max_iters; ++it) {
    const Image ap = sys.apply(pdir);
    const double pap = dot(pdir, ap);
    if (!(pap > 0.0)) throw SolverDivergence("conjugate gradient: operator is not positive definite");
    const double alpha = rr / pap;
    for (std::size_t k = 0; k < x.data.size(); ++k) {
      x.data[k] += alpha * pdir.data[k];
      r.data[k] -= alpha * ap.data[k];
    }
    const double rr_new = dot(r, r);
    rep.iterations = it + 1;
    rep.relative_residual = std::sqrt(rr_new) / scale;
    if (!std::isfinite(rr_new)) throw SolverDivergence("conjugate gradient: non-finite residual");
    // On an SPD system the CG residual may rise but stays below
    // sqrt(kappa) times the starting residual; only growth beyond that counts.
    growth = rr_new > rr && rr_new > kappa * rr0 ? growth + 1 : 0;
    if (growth >= 5) throw SolverDivergence("conjugate gradient: residual grew for 5 consecutive iterations");
    if (rep.relative_residual <= tol) break;
    const double beta = rr_new / rr;
    rr = rr_new;
    for (std::size_t k = 0; k < pdir.data.size(); ++k) pdir.data[k] = r.data[k] + beta * pdir.data[k];
  }
  return rep;
}

// Solves the primal step for frame i given the proximal center l_tilde,
// warm-started at warm.
inline Image solve_latent_step(const SequenceState& st, int i, const Image& l_tilde, const Image& warm,
                               const LatentSolveConfig& cfg, double lambda, int threads = 1,
                               CgReport* report = nullptr) {
  const LatentSystem sys(st, i, lambda, cfg.eps, threads);
  Image x = warm;
  const CgReport rep = conjugate_gradient(sys, sys.rhs(l_tilde), x, cfg.cg_iters, cfg.cg_tol);
  if (report) *report = rep;
  return x;
}

// Proximal center L_i - eps * (A^T s_i + sum of temporal adjoint terms that
// touch frame i, in either slot).
inline Image proximal_center(const SequenceState& st, int i, const DualState& duals, const SolverParams& p,
                             const detail::TemporalLinks& links, double eps) {
  Image center = st.latent[static_cast<std::size_t>(i)];
  Image grad = gradient_adjoint(duals.s[static_cast<std::size_t>(i)]);
  for (int n = -p.neighbors; n <= p.neighbors; ++n) {
    if (detail::TemporalLinks::active(st, p, i, n)) {
      const StackedPair adj =
          temporal_difference_adjoint(duals.q_at(i, n), links.at(i, n), p.threads, st.visibility_at(i, n));
      const double mu = p.mu_at(n);
      for (std::size_t k = 0; k < grad.data.size(); ++k) grad.data[k] += mu * adj.first.data[k];
    }
    const int j = i - n;  // terms (j, n) whose second slot is frame i
    if (detail::TemporalLinks::active(st, p, j, n)) {
      const StackedPair adj =
          temporal_difference_adjoint(duals.q_at(j, n), links.at(j, n), p.threads, st.visibility_at(j, n));
      const double mu = p.mu_at(n);
      for (std::size_t k = 0; k < grad.data.size(); ++k) grad.data[k] += mu * adj.second.data[k];
    }
  }
  for (std::size_t k = 0; k < center.data.size(); ++k) center.data[k] -= eps * grad.data[k];
  return center;
}

inline Image primal_update_latent(const SequenceState& st, int i, const DualState& duals, const SolverParams& p,
                                  const LatentSolveConfig& cfg) {
  const detail::TemporalLinks links(st, p);
  const Image center = proximal_center(st, i, duals, p, links, cfg.eps);
  return solve_latent_step(st, i, center, st.latent[static_cast<std::size_t>(i)], cfg, p.lambda, p.threads);
}

struct LatentReport {
  double objective_entry = 0.0;
  double objective_exit = 0.0;
  int best_sweep = 0;  // 0 = entry state kept
  int cg_iterations = 0;
};

// pd_iters Gauss-Seidel sweeps over all frames in ascending order. The
// returned frames are the sweep iterate with the lowest objective, so the
// objective never exceeds its entry value.
inline LatentReport restore_latent(SequenceState& st, DualState& duals, const SolverParams& p,
                                   const LatentSolveConfig& cfg) {
  SolverParams sp = p;
  sp.temporal_enabled = cfg.temporal_enabled;
  const detail::TemporalLinks links(st, sp);
  LatentReport rep;
  rep.objective_entry = detail::latent_objective(st, sp, links);
  double best = rep.objective_entry;
  std::vector<Image> best_frames = st.latent;
  for (int m = 0; m < cfg.pd_iters; ++m) {
    for (int i = 0; i < st.frames(); ++i) {
      const Image& li = st.latent[static_cast<std::size_t>(i)];
      duals.s[static_cast<std::size_t>(i)] = dual_update_spatial(duals.s[static_cast<std::size_t>(i)], li, cfg.eta);
      for (int n = -sp.neighbors; n <= sp.neighbors; ++n)
        if (detail::TemporalLinks::active(st, sp, i, n))
          duals.q_at(i, n) = dual_update_temporal(duals.q_at(i, n), li, st.latent[static_cast<std::size_t>(i + n)],
                                                  links.at(i, n), sp.mu_at(n), cfg.eta_temporal, sp.threads,
                                                  st.visibility_at(i, n));
      const Image center = proximal_center(st, i, duals, sp, links, cfg.eps);
      CgReport cg;
      st.latent[static_cast<std::size_t>(i)] = solve_latent_step(st, i, center, li, cfg, sp.lambda, sp.threads, &cg);
      rep.cg_iterations += cg.iterations;
    }
    const double e = detail::latent_objective(st, sp, links);
    if (e < best) {
      best = e;
      best_frames = st.latent;
      rep.best_sweep = m + 1;
    }
  }
  st.latent = std::move(best_frames);
  rep.objective_exit = best;
  return rep;
}

inline LatentReport restore_latent(SequenceState& st, DualState& duals, const SolverParams& p) {
  return restore_latent(st, duals, p, latent_config(st, p));
}

}  // namespace flowdeblur
