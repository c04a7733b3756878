#pragma once

// Energy terms shared by the latent and flow subproblems: flow composition
// for non-adjacent neighbors, the temporal difference operator, edge maps and
// evaluation of the full objective.

#include <cmath>
#include <cstdlib>
#include <vector>

#include "blur.hpp"
#include "core.hpp"

namespace flowdeblur {

// u_{i->k}(x) = u_a(x) + u_b(x + u_a(x)) for u_a: i->j and u_b: j->k.
inline FlowField compose_flow(const FlowField& a, const FlowField& b) {
  require_same_size(a, b, "compose_flow");
  FlowField out(a.width, a.height);
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      const Vec2 da = a.at(x, y);
      const Vec2 db = sample_flow(b, x + da.x, y + da.y);
      out.set(x, y, {da.x + db.x, da.y + db.y});
    }
  return out;
}

// Flow from frame i to frame i + n, chaining unit flows for |n| > 1.
inline FlowField offset_flow(const SequenceState& st, int i, int n) {
  if (n == 0 || i + n < 0 || i + n >= st.frames()) throw Error("offset flow references a missing frame");
  const int step = n > 0 ? 1 : -1;
  FlowField acc = st.unit_flow(i, step);
  for (int j = i + step; j != i + n; j += step) acc = compose_flow(acc, st.unit_flow(j, step));
  return acc;
}

// ---------------------------------------------------------------------------
// Temporal difference D [L_i; L_j](x) = o(x) (L_i(x) - L_j(x + flow(x))),
// where o is the optional visibility and is 0 when x + flow(x) falls outside
// the frame.

inline Image temporal_difference(const Image& li, const Image& lj, const FlowField& flow, int threads = 1,
                                const std::vector<double>* visibility = nullptr) {
  require_same_size(li, lj, "temporal_difference");
  require_same_size(li, flow, "temporal_difference");
  if (visibility && visibility->size() != flow.pixel_count())
    throw DimensionMismatch("temporal_difference: visibility size differs");
  Image out = warp_image(lj, flow, 1.0, threads);
  for (int y = 0; y < li.height; ++y)
    for (int x = 0; x < li.width; ++x) {
      const Vec2 d = flow.at(x, y);
      double wgt = inside_frame(li.width, li.height, x + d.x, y + d.y) ? 1.0 : 0.0;
      if (visibility) wgt *= (*visibility)[flow.index(x, y)];
      for (int c = 0; c < li.channels; ++c) {
        const std::size_t k = li.index(x, y, c);
        out.data[k] = wgt * (li.data[k] - out.data[k]);
      }
    }
  return out;
}

struct StackedPair {
  Image first;
  Image second;
};

// Transpose of D: identity on the first slot, negated bilinear scatter on the
// second.
inline StackedPair temporal_difference_adjoint(const Image& r, const FlowField& flow, int threads = 1,
                                              const std::vector<double>* visibility = nullptr) {
  require_same_size(r, flow, "temporal_difference_adjoint");
  if (visibility && visibility->size() != flow.pixel_count())
    throw DimensionMismatch("temporal_difference_adjoint: visibility size differs");
  auto weight = [&](int x, int y) {
    const Vec2 d = flow.at(x, y);
    double wgt = inside_frame(r.width, r.height, x + d.x, y + d.y) ? 1.0 : 0.0;
    if (visibility) wgt *= (*visibility)[flow.index(x, y)];
    return wgt;
  };
  std::vector<Image> partial(parallel::kScatterBlocks);
  parallel::for_blocks(r.height, threads, [&](int block, int y0, int y1) {
    Image& buf = partial[static_cast<std::size_t>(block)];
    buf = Image(r.width, r.height, r.channels);
    for (int y = y0; y < y1; ++y)
      for (int x = 0; x < r.width; ++x) {
        const double wgt = weight(x, y);
        if (wgt == 0.0) continue;
        const Vec2 d = flow.at(x, y);
        for (int c = 0; c < r.channels; ++c) scatter_bilinear(buf, x + d.x, y + d.y, c, -wgt * r.at(x, y, c));
      }
  });
  StackedPair out{r, Image(r.width, r.height, r.channels)};
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x) {
      const double wgt = weight(x, y);
      for (int c = 0; c < r.channels; ++c) out.first.at(x, y, c) *= wgt;
    }
  for (const Image& buf : partial) {
    if (buf.empty()) continue;
    for (std::size_t k = 0; k < buf.data.size(); ++k) out.second.data[k] += buf.data[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Edge map g(x) = nu * exp(-(|grad L|/sigma)^2), channel-summed magnitude.

struct EdgeMap {
  int width = 0;
  int height = 0;
  std::vector<double> g;

  [[nodiscard]] double max() const {
    double m = 0.0;
    for (double v : g) m = std::max(m, v);
    return m;
  }
};

inline EdgeMap compute_edge_map(const Image& reference, double nu, double sigma_i) {
  EdgeMap e{reference.width, reference.height, std::vector<double>(reference.pixel_count())};
  const VectorField gr = gradient(reference);
  for (int y = 0; y < reference.height; ++y)
    for (int x = 0; x < reference.width; ++x) {
      double mag2 = 0.0;
      for (int c = 0; c < reference.channels; ++c) {
        const double gx = gr.x.at(x, y, c);
        const double gy = gr.y.at(x, y, c);
        mag2 += gx * gx + gy * gy;
      }
      e.g[static_cast<std::size_t>(y) * static_cast<std::size_t>(reference.width) + static_cast<std::size_t>(x)] =
          nu * std::exp(-mag2 / (sigma_i * sigma_i));
    }
  return e;
}

inline std::vector<EdgeMap> edge_maps(const SequenceState& st, const SolverParams& p) {
  const std::vector<Image>& ref = st.edge_reference.empty() ? st.latent : st.edge_reference;
  std::vector<EdgeMap> out;
  out.reserve(ref.size());
  for (const Image& r : ref) out.push_back(compute_edge_map(r, p.nu, p.sigma_i));
  return out;
}

// ---------------------------------------------------------------------------
// Objective evaluation.

// Weighted anisotropic TV of a flow field.
inline double flow_tv(const FlowField& f, const EdgeMap& g) {
  double e = 0.0;
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      const std::size_t k = f.index(x, y);
      double s = 0.0;
      if (x + 1 < f.width) {
        const std::size_t r = f.index(x + 1, y);
        s += std::abs(f.u[r] - f.u[k]) + std::abs(f.v[r] - f.v[k]);
      }
      if (y + 1 < f.height) {
        const std::size_t d = f.index(x, y + 1);
        s += std::abs(f.u[d] - f.u[k]) + std::abs(f.v[d] - f.v[k]);
      }
      e += g.g[k] * s;
    }
  return e;
}

inline double image_tv(const Image& img) {
  double e = 0.0;
  for (const Image& d : derivative_filters(img))
    for (double v : d.data) e += std::abs(v);
  return e;
}

inline double l1_norm(const Image& img) {
  double e = 0.0;
  for (double v : img.data) e += std::abs(v);
  return e;
}

struct EnergyTerms {
  double data = 0.0;
  double temporal = 0.0;
  double spatial_latent = 0.0;
  double spatial_flow = 0.0;

  [[nodiscard]] double spatial() const { return spatial_latent + spatial_flow; }
  [[nodiscard]] double total() const { return data + temporal + spatial_latent + spatial_flow; }
  // Part that depends on the latent frames only.
  [[nodiscard]] double latent_objective() const { return data + temporal + spatial_latent; }
};

inline double frame_data_energy(const SequenceState& st, int i, const Image& latent, const SolverParams& p) {
  if (p.lambda == 0.0) return 0.0;
  const Image reblurred = blur_frame(st, i, latent, p.threads);
  return p.lambda * derivative_residual(reblurred, st.blurry[static_cast<std::size_t>(i)]);
}

inline double temporal_energy(const SequenceState& st, const SolverParams& p) {
  if (!p.temporal_enabled) return 0.0;
  double e = 0.0;
  for (int i = 0; i < st.frames(); ++i)
    for (int n = -p.neighbors; n <= p.neighbors; ++n) {
      const double mu = p.mu_at(n);
      if (mu == 0.0 || i + n < 0 || i + n >= st.frames()) continue;
      const FlowField f = offset_flow(st, i, n);
      e += mu * l1_norm(temporal_difference(st.latent[static_cast<std::size_t>(i)],
                                            st.latent[static_cast<std::size_t>(i + n)], f, p.threads,
                                            st.visibility_at(i, n)));
    }
  return e;
}

inline double flow_spatial_energy(const SequenceState& st, const std::vector<EdgeMap>& g) {
  double e = 0.0;
  for (int i = 0; i < st.frames(); ++i)
    for (int d : {-1, 1})
      if (st.has_flow(i, d)) e += flow_tv(st.unit_flow(i, d), g[static_cast<std::size_t>(i)]);
  return e;
}

inline EnergyTerms energy_terms(const SequenceState& st, const SolverParams& p, const std::vector<EdgeMap>& g) {
  EnergyTerms t;
  for (int i = 0; i < st.frames(); ++i) {
    t.data += frame_data_energy(st, i, st.latent[static_cast<std::size_t>(i)], p);
    t.spatial_latent += image_tv(st.latent[static_cast<std::size_t>(i)]);
  }
  t.temporal = temporal_energy(st, p);
  t.spatial_flow = flow_spatial_energy(st, g);
  return t;
}

inline EnergyTerms energy_terms(const SequenceState& st, const SolverParams& p) {
  return energy_terms(st, p, edge_maps(st, p));
}

// Full objective: data + temporal + TV of latent frames + edge-weighted TV of
// the unit flows.
inline double total_energy(const SequenceState& st, const SolverParams& p) { return energy_terms(st, p).total(); }

}  // namespace flowdeblur
