#pragma once

// Pixel-wise blur operator parameterized by bidirectional flows and the
// camera duty cycle. Each pixel integrates the latent frame along the two
// segments [0, tau * u_fwd] and [0, tau * u_bwd] with S midpoint samples per
// segment, so every row of the operator is a convex combination.

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"

namespace flowdeblur {

struct BlurParams {
  double tau = 1.0;
  int samples = 2;

  void validate() const {
    if (!(tau > 0.0 && tau <= 1.0)) throw Error("duty cycle must lie in (0, 1]");
    if (samples < 1) throw Error("blur sample count must be >= 1");
  }
  // Time of sample s (0-based) along a segment.
  [[nodiscard]] double sample_time(int s) const { return tau * (s + 0.5) / samples; }
};

inline double max_flow_magnitude(const FlowField& f) {
  double m = 0.0;
  for (std::size_t k = 0; k < f.u.size(); ++k) m = std::max(m, std::hypot(f.u[k], f.v[k]));
  return m;
}

// Spacing between consecutive samples stays at or below one pixel.
inline int default_blur_samples(double tau, double max_magnitude) {
  return std::max(2, static_cast<int>(std::ceil(tau * max_magnitude)));
}
inline int default_blur_samples(double tau, const FlowField& fwd, const FlowField& bwd) {
  return default_blur_samples(tau, std::max(max_flow_magnitude(fwd), max_flow_magnitude(bwd)));
}

namespace detail {

inline bool zero_vector(const FlowField& f, std::size_t k) { return f.u[k] == 0.0 && f.v[k] == 0.0; }

}  // namespace detail

inline Image apply_blur(const Image& latent, const FlowField& fwd, const FlowField& bwd, const BlurParams& bp,
                        int threads = 1) {
  require_same_size(latent, fwd, "apply_blur");
  require_same_size(latent, bwd, "apply_blur");
  bp.validate();
  Image out(latent.width, latent.height, latent.channels);
  const double norm = 1.0 / (2.0 * bp.samples);
  parallel::for_rows(latent.height, threads, [&](int y0, int y1) {
    std::vector<double> acc(static_cast<std::size_t>(latent.channels));
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < latent.width; ++x) {
        const std::size_t k = fwd.index(x, y);
        if (detail::zero_vector(fwd, k) && detail::zero_vector(bwd, k)) {
          for (int c = 0; c < latent.channels; ++c) out.at(x, y, c) = latent.at(x, y, c);
          continue;
        }
        std::fill(acc.begin(), acc.end(), 0.0);
        for (const FlowField* f : {&fwd, &bwd}) {
          const double du = f->u[k];
          const double dv = f->v[k];
          for (int s = 0; s < bp.samples; ++s) {
            const double t = bp.sample_time(s);
            for (int c = 0; c < latent.channels; ++c)
              acc[static_cast<std::size_t>(c)] += sample_bilinear(latent, x + t * du, y + t * dv, c);
          }
        }
        for (int c = 0; c < latent.channels; ++c) out.at(x, y, c) = acc[static_cast<std::size_t>(c)] * norm;
      }
    }
  });
  return out;
}

// Exact transpose of apply_blur. Scatters go to per-block buffers that are
// reduced in a fixed order, so the result is independent of the thread count.
inline Image apply_blur_adjoint(const Image& residual, const FlowField& fwd, const FlowField& bwd,
                                const BlurParams& bp, int threads = 1) {
  require_same_size(residual, fwd, "apply_blur_adjoint");
  require_same_size(residual, bwd, "apply_blur_adjoint");
  bp.validate();
  const double norm = 1.0 / (2.0 * bp.samples);
  std::vector<Image> partial(parallel::kScatterBlocks);
  parallel::for_blocks(residual.height, threads, [&](int block, int y0, int y1) {
    Image& buf = partial[static_cast<std::size_t>(block)];
    buf = Image(residual.width, residual.height, residual.channels);
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < residual.width; ++x) {
        const std::size_t k = fwd.index(x, y);
        if (detail::zero_vector(fwd, k) && detail::zero_vector(bwd, k)) {
          for (int c = 0; c < residual.channels; ++c) buf.at(x, y, c) += residual.at(x, y, c);
          continue;
        }
        for (const FlowField* f : {&fwd, &bwd}) {
          const double du = f->u[k];
          const double dv = f->v[k];
          for (int s = 0; s < bp.samples; ++s) {
            const double t = bp.sample_time(s);
            for (int c = 0; c < residual.channels; ++c)
              scatter_bilinear(buf, x + t * du, y + t * dv, c, residual.at(x, y, c) * norm);
          }
        }
      }
    }
  });
  Image out(residual.width, residual.height, residual.channels);
  for (const Image& buf : partial) {
    if (buf.empty()) continue;
    for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] += buf.data[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Explicit kernels.

struct RasterKernel {
  int center_x = 0;
  int center_y = 0;
  int window = 1;
  std::vector<double> weights;  // window x window, row-major, offset (-r..r)

  [[nodiscard]] int radius() const { return window / 2; }
  [[nodiscard]] double at(int dx, int dy) const {
    return weights[static_cast<std::size_t>((dy + radius()) * window + (dx + radius()))];
  }
};

// Weights of the blur row at pixel (x, y), accumulated exactly as apply_blur
// samples them. When width/height are positive, sample positions are clamped
// to that image like sample_bilinear does.
inline RasterKernel rasterize_kernel(int x, int y, Vec2 fwd_vec, Vec2 bwd_vec, const BlurParams& bp, int window,
                                     int width = 0, int height = 0) {
  bp.validate();
  if (window < 1 || window % 2 == 0) throw Error("kernel window must be a positive odd size");
  const int r = window / 2;
  const double reach = bp.tau * std::max(std::hypot(fwd_vec.x, fwd_vec.y), std::hypot(bwd_vec.x, bwd_vec.y));
  if (reach > r + 1e-9) throw Error("kernel window too small for the blur extent");
  RasterKernel k;
  k.center_x = x;
  k.center_y = y;
  k.window = window;
  k.weights.assign(static_cast<std::size_t>(window * window), 0.0);
  auto add = [&](int px, int py, double w) {
    if (w == 0.0) return;
    const int dx = px - x;
    const int dy = py - y;
    if (dx < -r || dx > r || dy < -r || dy > r) throw Error("kernel window too small for the blur extent");
    k.weights[static_cast<std::size_t>((dy + r) * window + (dx + r))] += w;
  };
  if (fwd_vec.x == 0.0 && fwd_vec.y == 0.0 && bwd_vec.x == 0.0 && bwd_vec.y == 0.0) {
    add(x, y, 1.0);
    return k;
  }
  const bool bounded = width > 0 && height > 0;
  const double norm = 1.0 / (2.0 * bp.samples);
  for (Vec2 d : {fwd_vec, bwd_vec}) {
    for (int s = 0; s < bp.samples; ++s) {
      const double t = bp.sample_time(s);
      const double px = x + t * d.x;
      const double py = y + t * d.y;
      int x0, y0, x1, y1;
      double fx, fy;
      if (bounded) {
        const BilinearStencil st = bilinear_stencil(width, height, px, py);
        x0 = st.x0, x1 = st.x1, y0 = st.y0, y1 = st.y1, fx = st.fx, fy = st.fy;
      } else {
        x0 = static_cast<int>(std::floor(px));
        y0 = static_cast<int>(std::floor(py));
        x1 = x0 + 1;
        y1 = y0 + 1;
        fx = px - x0;
        fy = py - y0;
      }
      add(x0, y0, (1.0 - fy) * (1.0 - fx) * norm);
      add(x1, y0, (1.0 - fy) * fx * norm);
      add(x0, y1, fy * (1.0 - fx) * norm);
      add(x1, y1, fy * fx * norm);
    }
  }
  return k;
}

// Plain-text grid, one kernel row per line.
inline std::string to_text(const RasterKernel& k) {
  std::ostringstream os;
  os.precision(9);
  for (int row = 0; row < k.window; ++row) {
    for (int col = 0; col < k.window; ++col) {
      if (col) os << ' ';
      os << k.weights[static_cast<std::size_t>(row * k.window + col)];
    }
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Sequence-level helpers.

// Flows that parameterize the kernel of frame i. A boundary frame lacks one
// temporal neighbor; its missing segment mirrors the available flow under the
// constant-velocity assumption of the blur model.
struct KernelFlows {
  FlowField fwd;
  FlowField bwd;
  bool fwd_mirrored = false;  // fwd = -bwd
  bool bwd_mirrored = false;  // bwd = -fwd
};

inline FlowField negated(const FlowField& f) {
  FlowField n(f.width, f.height);
  for (std::size_t k = 0; k < f.u.size(); ++k) {
    n.u[k] = -f.u[k];
    n.v[k] = -f.v[k];
  }
  return n;
}

inline KernelFlows kernel_flows(const std::vector<FlowField>& fwd, const std::vector<FlowField>& bwd, int i) {
  const int t = static_cast<int>(fwd.size());
  KernelFlows kf;
  const bool has_f = i + 1 < t;
  const bool has_b = i > 0;
  if (has_f && has_b) {
    kf.fwd = fwd[static_cast<std::size_t>(i)];
    kf.bwd = bwd[static_cast<std::size_t>(i)];
  } else if (has_f) {
    kf.fwd = fwd[static_cast<std::size_t>(i)];
    kf.bwd = negated(kf.fwd);
    kf.bwd_mirrored = true;
  } else if (has_b) {
    kf.bwd = bwd[static_cast<std::size_t>(i)];
    kf.fwd = negated(kf.bwd);
    kf.fwd_mirrored = true;
  } else {
    kf.fwd = fwd[static_cast<std::size_t>(i)];
    kf.bwd = bwd[static_cast<std::size_t>(i)];
  }
  return kf;
}

inline KernelFlows kernel_flows(const SequenceState& st, int i) { return kernel_flows(st.fwd, st.bwd, i); }

inline BlurParams blur_params(const SequenceState& st, int i) {
  return {st.duty[static_cast<std::size_t>(i)], st.blur_samples};
}

inline Image blur_frame(const SequenceState& st, int i, const Image& latent, int threads = 1) {
  const KernelFlows kf = kernel_flows(st, i);
  return apply_blur(latent, kf.fwd, kf.bwd, blur_params(st, i), threads);
}

inline Image blur_frame_adjoint(const SequenceState& st, int i, const Image& residual, int threads = 1) {
  const KernelFlows kf = kernel_flows(st, i);
  return apply_blur_adjoint(residual, kf.fwd, kf.bwd, blur_params(st, i), threads);
}

// ---------------------------------------------------------------------------
// Duty cycle.

// Derivative-domain misfit sum_d || d K b - d ref ||^2.
inline double derivative_residual(const Image& reblurred, const Image& ref) {
  double e = 0.0;
  for (Derivative d : kDerivatives) {
    const Image a = apply_derivative(d, reblurred);
    const Image b = apply_derivative(d, ref);
    for (std::size_t k = 0; k < a.data.size(); ++k) {
      const double r = a.data[k] - b.data[k];
      e += r * r;
    }
  }
  return e;
}

// Unsharp-masked frame used as a stand-in latent image.
inline Image sharpened_proxy(const Image& blurry) {
  const Image smooth = gaussian_blur(blurry, 1.0);
  Image out = blurry;
  for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] += 1.5 * (blurry.data[k] - smooth.data[k]);
  return out;
}

struct DutyEstimate {
  std::vector<double> per_frame;  // argmin per frame
  double median = 1.0;
  std::vector<std::vector<double>> residuals;  // [frame][grid index]
};

inline const std::vector<double>& duty_grid() {
  static const std::vector<double> grid{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  return grid;
}

// Grid search over tau minimizing the derivative-domain residual of the
// re-blurred proxy; the temporal median is the sequence duty cycle.
inline DutyEstimate estimate_duty_cycle(const std::vector<Image>& blurry, const std::vector<FlowField>& fwd,
                                        const std::vector<FlowField>& bwd, int threads = 1) {
  if (blurry.size() < 2) throw Error("duty cycle estimation needs >= 2 frames");
  if (fwd.size() != blurry.size() || bwd.size() != blurry.size())
    throw DimensionMismatch("duty cycle estimation: flow lists must match the frame count");
  DutyEstimate est;
  const int t = static_cast<int>(blurry.size());
  for (int i = 0; i < t; ++i) {
    const Image& b = blurry[static_cast<std::size_t>(i)];
    const KernelFlows kf = kernel_flows(fwd, bwd, i);
    const Image proxy = sharpened_proxy(b);
    const double mag = std::max(max_flow_magnitude(kf.fwd), max_flow_magnitude(kf.bwd));
    std::vector<double> res;
    double best = 0.0;
    double best_tau = duty_grid().front();
    for (std::size_t g = 0; g < duty_grid().size(); ++g) {
      const double tau = duty_grid()[g];
      const BlurParams bp{tau, default_blur_samples(tau, mag)};
      const double r = derivative_residual(apply_blur(proxy, kf.fwd, kf.bwd, bp, threads), b);
      res.push_back(r);
      if (g == 0 || r < best) {
        best = r;
        best_tau = tau;
      }
    }
    est.per_frame.push_back(best_tau);
    est.residuals.push_back(std::move(res));
  }
  std::vector<double> sorted = est.per_frame;
  std::sort(sorted.begin(), sorted.end());
  est.median = sorted[(sorted.size() - 1) / 2];
  return est;
}

}  // namespace flowdeblur
