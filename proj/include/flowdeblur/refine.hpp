#pragma once

// Occlusion-aware spatio-temporal filtering of latent frames. Each output
// pixel is a normalized, patch-similarity weighted average over 3x3
// neighborhoods at the flow-matched positions in the neighboring frames
// (and around the pixel itself for n = 0).

#include <cmath>
#include <vector>

#include "core.hpp"
#include "terms.hpp"

namespace flowdeblur {

// Per-pixel visibility weight in {0, 0.5, 1} for one (frame, offset) pair.
struct OcclusionMap {
  int width = 0;
  int height = 0;
  std::vector<double> o;

  [[nodiscard]] double at(int x, int y) const {
    return o[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
  }
};

struct OcclusionThresholds {
  double visible = 0.5;  // e <= visible -> 1
  double partial = 1.5;  // visible < e <= partial -> 0.5, else 0

  [[nodiscard]] OcclusionThresholds scaled(double s) const { return {visible * s, partial * s}; }
};

// Forward-backward consistency e(x) = |fwd(x) + bwd(x + fwd(x))|.
inline OcclusionMap detect_occlusion(const FlowField& fwd, const FlowField& bwd, OcclusionThresholds th = {}) {
  require_same_size(fwd, bwd, "detect_occlusion");
  OcclusionMap m{fwd.width, fwd.height, std::vector<double>(fwd.pixel_count())};
  for (int y = 0; y < fwd.height; ++y)
    for (int x = 0; x < fwd.width; ++x) {
      const Vec2 f = fwd.at(x, y);
      const Vec2 b = sample_flow(bwd, x + f.x, y + f.y);
      const double e = std::hypot(f.x + b.x, f.y + b.y);
      m.o[fwd.index(x, y)] = e <= th.visible ? 1.0 : (e <= th.partial ? 0.5 : 0.0);
    }
  return m;
}

// Occlusion maps for every (frame, offset) with 0 < |n| <= N.
struct OcclusionSet {
  int neighbors = 0;
  std::vector<std::vector<OcclusionMap>> maps;  // [i][n + N]

  [[nodiscard]] const OcclusionMap& at(int i, int n) const {
    return maps[static_cast<std::size_t>(i)][static_cast<std::size_t>(n + neighbors)];
  }
  OcclusionMap& at(int i, int n) { return maps[static_cast<std::size_t>(i)][static_cast<std::size_t>(n + neighbors)]; }
};

inline OcclusionSet detect_occlusions(const SequenceState& st, int neighbors, OcclusionThresholds th = {}) {
  OcclusionSet set;
  set.neighbors = neighbors;
  set.maps.resize(static_cast<std::size_t>(st.frames()));
  for (int i = 0; i < st.frames(); ++i) {
    set.maps[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(2 * neighbors + 1));
    for (int n = -neighbors; n <= neighbors; ++n) {
      if (n == 0 || i + n < 0 || i + n >= st.frames()) continue;
      set.at(i, n) = detect_occlusion(offset_flow(st, i, n), offset_flow(st, i + n, -n), th);
    }
  }
  return set;
}

// Stores the occlusion states of the current flows as the visibility that
// gates the temporal terms.
inline void assign_visibility(SequenceState& st, int neighbors, OcclusionThresholds th = {}) {
  const OcclusionSet occ = detect_occlusions(st, neighbors, th);
  st.visibility_neighbors = neighbors;
  st.visibility.assign(static_cast<std::size_t>(st.frames()),
                       std::vector<std::vector<double>>(static_cast<std::size_t>(2 * neighbors + 1)));
  for (int i = 0; i < st.frames(); ++i)
    for (int n = -neighbors; n <= neighbors; ++n)
      if (n != 0 && i + n >= 0 && i + n < st.frames())
        st.visibility[static_cast<std::size_t>(i)][static_cast<std::size_t>(n + neighbors)] = occ.at(i, n).o;
}

struct FilterConfig {
  double sigma_w = 25.0 / 255.0;
  int patch_radius = 2;    // 5x5 patches
  int search_radius = 1;   // 3x3 candidate neighborhood
  bool normalize_patch = false;  // divide the SSD by the patch pixel count
};

namespace detail {

inline double patch_distance(const Image& a, int ax, int ay, const Image& b, int bx, int by, int r) {
  double s = 0.0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) {
      const int pax = std::clamp(ax + dx, 0, a.width - 1);
      const int pay = std::clamp(ay + dy, 0, a.height - 1);
      const int pbx = std::clamp(bx + dx, 0, b.width - 1);
      const int pby = std::clamp(by + dy, 0, b.height - 1);
      for (int c = 0; c < a.channels; ++c) {
        const double d = a.at(pax, pay, c) - b.at(pbx, pby, c);
        s += d * d;
      }
    }
  return s;
}

}  // namespace detail

// Filters every latent frame. Offsets whose neighbor frame does not exist are
// skipped; n = 0 always has visibility 1. Pixels with a vanishing
// normalization are left unchanged. The average is accumulated as an offset
// from the center value so constant input is reproduced exactly.
inline std::vector<Image> spatiotemporal_filter(const SequenceState& st, const OcclusionSet& occ,
                                                const FilterConfig& cfg, int neighbors, int threads = 1) {
  const int t = st.frames();
  std::vector<Image> out(st.latent.size());
  const int r = cfg.patch_radius;
  const double patch_px = static_cast<double>((2 * r + 1) * (2 * r + 1));
  const double inv2s2 = 1.0 / (2.0 * cfg.sigma_w * cfg.sigma_w);
  for (int i = 0; i < t; ++i) {
    const Image& li = st.latent[static_cast<std::size_t>(i)];
    std::vector<FlowField> flows(static_cast<std::size_t>(2 * neighbors + 1));
    for (int n = -neighbors; n <= neighbors; ++n)
      if (n != 0 && i + n >= 0 && i + n < t) flows[static_cast<std::size_t>(n + neighbors)] = offset_flow(st, i, n);
    Image res(li.width, li.height, li.channels);
    parallel::for_rows(li.height, threads, [&](int y0, int y1) {
      std::vector<double> acc(static_cast<std::size_t>(li.channels));
      for (int y = y0; y < y1; ++y)
        for (int x = 0; x < li.width; ++x) {
          double z = 0.0;
          std::fill(acc.begin(), acc.end(), 0.0);
          for (int n = -neighbors; n <= neighbors; ++n) {
            const int j = i + n;
            if (j < 0 || j >= t) continue;
            double vis = 1.0;
            int cx = x;
            int cy = y;
            if (n != 0) {
              vis = occ.at(i, n).at(x, y);
              if (vis == 0.0) continue;
              const Vec2 d = flows[static_cast<std::size_t>(n + neighbors)].at(x, y);
              cx = static_cast<int>(std::lround(x + d.x));
              cy = static_cast<int>(std::lround(y + d.y));
            }
            const Image& lj = st.latent[static_cast<std::size_t>(j)];
            for (int sy = -cfg.search_radius; sy <= cfg.search_radius; ++sy)
              for (int sx = -cfg.search_radius; sx <= cfg.search_radius; ++sx) {
                const int yx = cx + sx;
                const int yy = cy + sy;
                if (yx < 0 || yy < 0 || yx >= lj.width || yy >= lj.height) continue;
                double d2 = detail::patch_distance(li, x, y, lj, yx, yy, r);
                if (cfg.normalize_patch) d2 /= patch_px;
                const double wgt = vis * std::exp(-d2 * inv2s2);
                z += wgt;
                for (int c = 0; c < li.channels; ++c)
                  acc[static_cast<std::size_t>(c)] += wgt * (lj.at(yx, yy, c) - li.at(x, y, c));
              }
          }
          for (int c = 0; c < li.channels; ++c)
            res.at(x, y, c) = z < 1e-8 ? li.at(x, y, c) : li.at(x, y, c) + acc[static_cast<std::size_t>(c)] / z;
        }
    });
    out[static_cast<std::size_t>(i)] = std::move(res);
  }
  return out;
}

}  // namespace flowdeblur
