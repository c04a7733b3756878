#pragma once

// Domain types and image primitives shared by every solver: pixel containers,
// clamp-to-edge bilinear sampling (gather, scatter and positional derivative),
// warping and forward-difference derivative filters with their adjoints.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "parallel.hpp"

namespace flowdeblur {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};

// Raised by iterative solvers when the iteration is not contracting,
// typically because of step sizes that violate the stability bound.
struct SolverDivergence : Error {
  using Error::Error;
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

// Row-major, channel-interleaved pixel grid with nominal range [0, 1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 1;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, int c = 1, double fill = 0.0)
      : width(w), height(h), channels(c),
        data(static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * static_cast<std::size_t>(c), fill) {
    if (w < 0 || h < 0 || (c != 1 && c != 3)) throw Error("invalid image shape");
  }

  [[nodiscard]] std::size_t index(int x, int y, int c = 0) const {
    return (static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)) *
               static_cast<std::size_t>(channels) +
           static_cast<std::size_t>(c);
  }
  double& at(int x, int y, int c = 0) { return data[index(x, y, c)]; }
  [[nodiscard]] double at(int x, int y, int c = 0) const { return data[index(x, y, c)]; }

  [[nodiscard]] std::size_t pixel_count() const {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
  }
  [[nodiscard]] bool empty() const { return data.empty(); }
  [[nodiscard]] bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

// Per-pixel displacement in pixels; u is horizontal, v vertical.
struct FlowField {
  int width = 0;
  int height = 0;
  std::vector<double> u;
  std::vector<double> v;

  FlowField() = default;
  FlowField(int w, int h, double u0 = 0.0, double v0 = 0.0)
      : width(w), height(h),
        u(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), u0),
        v(static_cast<std::size_t>(w) * static_cast<std::size_t>(h), v0) {}

  [[nodiscard]] std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x);
  }
  [[nodiscard]] Vec2 at(int x, int y) const { return {u[index(x, y)], v[index(x, y)]}; }
  void set(int x, int y, Vec2 d) {
    u[index(x, y)] = d.x;
    v[index(x, y)] = d.y;
  }
  [[nodiscard]] std::size_t pixel_count() const { return u.size(); }
};

// Two images holding the horizontal and vertical parts of a vector quantity
// (image gradients, TV dual variables).
struct VectorField {
  Image x;
  Image y;
};

inline void require_same_size(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw DimensionMismatch(std::string(what) + ": image shapes differ");
}
inline void require_same_size(const Image& a, const FlowField& f, const char* what) {
  if (a.width != f.width || a.height != f.height)
    throw DimensionMismatch(std::string(what) + ": flow does not match image size");
}
inline void require_same_size(const FlowField& a, const FlowField& b, const char* what) {
  if (a.width != b.width || a.height != b.height)
    throw DimensionMismatch(std::string(what) + ": flow fields differ in size");
}

inline bool all_finite(const Image& img) {
  return std::all_of(img.data.begin(), img.data.end(), [](double v) { return std::isfinite(v); });
}
inline bool all_finite(const FlowField& f) {
  auto fin = [](double v) { return std::isfinite(v); };
  return std::all_of(f.u.begin(), f.u.end(), fin) && std::all_of(f.v.begin(), f.v.end(), fin);
}

// ---------------------------------------------------------------------------
// Bilinear sampling with clamp-to-edge.

// True when (x, y) lies within the hull of the pixel centers.
inline bool inside_frame(int width, int height, double x, double y) {
  return x >= 0.0 && y >= 0.0 && x <= width - 1.0 && y <= height - 1.0;
}

// Stencil of a clamped bilinear lookup. When a coordinate is clamped the
// positional derivative along that axis is zero.
struct BilinearStencil {
  int x0, x1, y0, y1;
  double fx, fy;
  bool clamped_x, clamped_y;
};

inline BilinearStencil bilinear_stencil(int width, int height, double x, double y) {
  BilinearStencil s{};
  const double maxx = static_cast<double>(width - 1);
  const double maxy = static_cast<double>(height - 1);
  s.clamped_x = !(x > 0.0 && x < maxx);
  s.clamped_y = !(y > 0.0 && y < maxy);
  const double cx = std::clamp(x, 0.0, maxx);
  const double cy = std::clamp(y, 0.0, maxy);
  s.x0 = static_cast<int>(std::floor(cx));
  s.y0 = static_cast<int>(std::floor(cy));
  s.x1 = std::min(s.x0 + 1, width - 1);
  s.y1 = std::min(s.y0 + 1, height - 1);
  s.fx = cx - s.x0;
  s.fy = cy - s.y0;
  return s;
}

inline double sample_bilinear(const Image& img, double x, double y, int c = 0) {
  const BilinearStencil s = bilinear_stencil(img.width, img.height, x, y);
  const double v00 = img.at(s.x0, s.y0, c);
  if (s.fx == 0.0 && s.fy == 0.0) return v00;
  const double v10 = img.at(s.x1, s.y0, c);
  const double v01 = img.at(s.x0, s.y1, c);
  const double v11 = img.at(s.x1, s.y1, c);
  return (1.0 - s.fy) * ((1.0 - s.fx) * v00 + s.fx * v10) + s.fy * ((1.0 - s.fx) * v01 + s.fx * v11);
}

inline std::vector<double> sample_bilinear(const Image& img, Vec2 p) {
  std::vector<double> out(static_cast<std::size_t>(img.channels));
  for (int c = 0; c < img.channels; ++c) out[static_cast<std::size_t>(c)] = sample_bilinear(img, p.x, p.y, c);
  return out;
}

// Exact derivative of the bilinear interpolant with respect to the sample
// position. Zero along an axis whose coordinate is clamped.
inline Vec2 sample_bilinear_gradient(const Image& img, double x, double y, int c = 0) {
  const BilinearStencil s = bilinear_stencil(img.width, img.height, x, y);
  const double v00 = img.at(s.x0, s.y0, c);
  const double v10 = img.at(s.x1, s.y0, c);
  const double v01 = img.at(s.x0, s.y1, c);
  const double v11 = img.at(s.x1, s.y1, c);
  Vec2 g;
  if (!s.clamped_x) g.x = (1.0 - s.fy) * (v10 - v00) + s.fy * (v11 - v01);
  if (!s.clamped_y) g.y = (1.0 - s.fx) * (v01 - v00) + s.fx * (v11 - v10);
  return g;
}

// Transpose of sample_bilinear: adds value onto the four neighbors.
inline void scatter_bilinear(Image& img, double x, double y, int c, double value) {
  const BilinearStencil s = bilinear_stencil(img.width, img.height, x, y);
  img.at(s.x0, s.y0, c) += (1.0 - s.fy) * (1.0 - s.fx) * value;
  img.at(s.x1, s.y0, c) += (1.0 - s.fy) * s.fx * value;
  img.at(s.x0, s.y1, c) += s.fy * (1.0 - s.fx) * value;
  img.at(s.x1, s.y1, c) += s.fy * s.fx * value;
}

inline Vec2 sample_flow(const FlowField& f, double x, double y) {
  const BilinearStencil s = bilinear_stencil(f.width, f.height, x, y);
  // Difference form: a constant field is reproduced exactly.
  auto lerp = [&](const std::vector<double>& d) {
    const double v00 = d[f.index(s.x0, s.y0)];
    const double v10 = d[f.index(s.x1, s.y0)];
    const double v01 = d[f.index(s.x0, s.y1)];
    const double v11 = d[f.index(s.x1, s.y1)];
    const double top = v00 + s.fx * (v10 - v00);
    const double bottom = v01 + s.fx * (v11 - v01);
    return top + s.fy * (bottom - top);
  };
  return {lerp(f.u), lerp(f.v)};
}

// out(x) = img(x + t * flow(x))
inline Image warp_image(const Image& img, const FlowField& flow, double t, int threads = 1) {
  require_same_size(img, flow, "warp_image");
  Image out(img.width, img.height, img.channels);
  parallel::for_rows(img.height, threads, [&](int y0, int y1) {
    for (int y = y0; y < y1; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const Vec2 d = flow.at(x, y);
        const double px = x + t * d.x;
        const double py = y + t * d.y;
        for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = sample_bilinear(img, px, py, c);
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Forward differences with a zero derivative on the last column / row, and
// their exact adjoints.

inline Image diff_x(const Image& img) {
  Image out(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x + 1 < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(x + 1, y, c) - img.at(x, y, c);
  return out;
}

inline Image diff_y(const Image& img) {
  Image out(img.width, img.height, img.channels);
  for (int y = 0; y + 1 < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) out.at(x, y, c) = img.at(x, y + 1, c) - img.at(x, y, c);
  return out;
}

inline Image diff_x_adjoint(const Image& r) {
  Image out(r.width, r.height, r.channels);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int c = 0; c < r.channels; ++c) {
        double v = 0.0;
        if (x + 1 < r.width) v -= r.at(x, y, c);
        if (x >= 1) v += r.at(x - 1, y, c);
        out.at(x, y, c) = v;
      }
  return out;
}

inline Image diff_y_adjoint(const Image& r) {
  Image out(r.width, r.height, r.channels);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int c = 0; c < r.channels; ++c) {
        double v = 0.0;
        if (y + 1 < r.height) v -= r.at(x, y, c);
        if (y >= 1) v += r.at(x, y - 1, c);
        out.at(x, y, c) = v;
      }
  return out;
}

inline VectorField gradient(const Image& img) { return {diff_x(img), diff_y(img)}; }

// Adjoint of gradient, i.e. negative divergence.
inline Image gradient_adjoint(const VectorField& g) {
  Image out = diff_x_adjoint(g.x);
  const Image oy = diff_y_adjoint(g.y);
  for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] += oy.data[k];
  return out;
}

// The derivative filter bank used by the data term: {d/dx, d/dy}.
enum class Derivative { X, Y };
inline constexpr std::array<Derivative, 2> kDerivatives{Derivative::X, Derivative::Y};

inline Image apply_derivative(Derivative d, const Image& img) {
  return d == Derivative::X ? diff_x(img) : diff_y(img);
}
inline Image apply_derivative_adjoint(Derivative d, const Image& img) {
  return d == Derivative::X ? diff_x_adjoint(img) : diff_y_adjoint(img);
}

inline std::vector<Image> derivative_filters(const Image& img) { return {diff_x(img), diff_y(img)}; }

// Sum over the filter bank of d^T d applied to img.
inline Image derivative_normal(const Image& img) {
  Image out(img.width, img.height, img.channels);
  for (Derivative d : kDerivatives) {
    const Image t = apply_derivative_adjoint(d, apply_derivative(d, img));
    for (std::size_t k = 0; k < out.data.size(); ++k) out.data[k] += t.data[k];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Small helpers.

inline double dot(const Image& a, const Image& b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.data.size(); ++k) s += a.data[k] * b.data[k];
  return s;
}

inline Image gaussian_blur(const Image& img, double sigma) {
  if (sigma <= 0.0) return img;
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    sum += k[static_cast<std::size_t>(i + radius)];
  }
  for (double& w : k) w /= sum;
  Image tmp(img.width, img.height, img.channels);
  Image out(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] * img.at(std::clamp(x + i, 0, img.width - 1), y, c);
        tmp.at(x, y, c) = acc;
      }
  for (int y = 0; y < img.height; ++y)
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < img.channels; ++c) {
        double acc = 0.0;
        for (int i = -radius; i <= radius; ++i)
          acc += k[static_cast<std::size_t>(i + radius)] * tmp.at(x, std::clamp(y + i, 0, img.height - 1), c);
        out.at(x, y, c) = acc;
      }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration and sequence state.

struct SolverParams {
  double lambda = 250.0;
  std::vector<double> mu{250.0, 250.0};  // weight for |n| = 1..N
  double nu = 20.0;
  double sigma_i = 25.0 / 255.0;
  int neighbors = 2;  // N
  double pyr_scale = 0.9;
  int pyr_levels = 17;  // upper bound; capped so the coarsest side is >= 8 px
  double eta_latent = 0.0;  // 0 selects the stability-bound default
  double eps_latent = 0.0;
  double eta_flow = 0.0;
  double eps_flow = 0.0;
  int outer_iters = 3;
  int pd_iters = 30;       // latent primal-dual sweeps per restore call
  int flow_pd_iters = 30;  // primal-dual steps per flow linearization
  int warps = 5;           // flow relinearizations per estimate call
  int cg_iters = 30;
  double cg_tol = 1e-6;
  int blur_samples = 0;  // 0 selects max(2, ceil(tau * max |u|))
  double sigma_w = 25.0 / 255.0;
  bool temporal_enabled = true;
  bool filter_enabled = true;
  bool filter_finest_only = false;
  int threads = 1;

  [[nodiscard]] double mu_at(int n) const {
    const int a = n < 0 ? -n : n;
    if (a == 0 || a > neighbors) return 0.0;
    if (static_cast<std::size_t>(a) > mu.size()) return mu.empty() ? 0.0 : mu.back();
    return mu[static_cast<std::size_t>(a - 1)];
  }

  // Defaults tied to the data weight: mu_n = lambda, nu = 0.08 lambda.
  static SolverParams with_lambda(double lambda) {
    SolverParams p;
    p.lambda = lambda;
    p.mu.assign(static_cast<std::size_t>(p.neighbors), lambda);
    p.nu = 0.08 * lambda;
    return p;
  }

  void validate() const {
    if (!(lambda >= 0.0)) throw Error("lambda must be non-negative");
    for (double m : mu)
      if (!(m >= 0.0)) throw Error("mu_n must be non-negative");
    if (!(pyr_scale > 0.0 && pyr_scale < 1.0)) throw Error("pyramid scale must lie in (0, 1)");
    if (neighbors < 1) throw Error("temporal neighborhood radius must be >= 1");
    if (blur_samples < 0) throw Error("blur sample count must be >= 1 (or 0 for auto)");
    if (pyr_levels < 1) throw Error("need at least one pyramid level");
    if (outer_iters < 0 || pd_iters < 0 || flow_pd_iters < 0 || warps < 0 || cg_iters < 1)
      throw Error("iteration counts must be non-negative");
    if (!(sigma_i > 0.0) || !(sigma_w > 0.0)) throw Error("bandwidths must be positive");
  }
};

// Frames, latent estimates, bidirectional unit flows and duty cycles of a
// whole sequence at one resolution. Frame 0 has no backward flow and the last
// frame no forward flow; those slots hold zero fields.
struct SequenceState {
  std::vector<Image> blurry;
  std::vector<Image> latent;
  std::vector<FlowField> fwd;
  std::vector<FlowField> bwd;
  std::vector<double> duty;
  // Frames the flow edge maps are computed from; falls back to latent.
  std::vector<Image> edge_reference;
  // Integration samples per direction used by the blur operator.
  int blur_samples = 2;
  // Per-pixel visibility in [0, 1] of x + u_{i->i+n} in frame i+n, indexed
  // [i][n + visibility_neighbors]. Empty means every correspondence counts.
  std::vector<std::vector<std::vector<double>>> visibility;
  int visibility_neighbors = 0;

  [[nodiscard]] int frames() const { return static_cast<int>(blurry.size()); }
  [[nodiscard]] int width() const { return blurry.empty() ? 0 : blurry.front().width; }
  [[nodiscard]] int height() const { return blurry.empty() ? 0 : blurry.front().height; }
  [[nodiscard]] int channels() const { return blurry.empty() ? 1 : blurry.front().channels; }

  [[nodiscard]] bool has_flow(int i, int direction) const {
    const int j = i + direction;
    return j >= 0 && j < frames();
  }
  [[nodiscard]] const FlowField& unit_flow(int i, int direction) const {
    return direction > 0 ? fwd[static_cast<std::size_t>(i)] : bwd[static_cast<std::size_t>(i)];
  }
  FlowField& unit_flow(int i, int direction) {
    return direction > 0 ? fwd[static_cast<std::size_t>(i)] : bwd[static_cast<std::size_t>(i)];
  }

  [[nodiscard]] const std::vector<double>* visibility_at(int i, int n) const {
    if (visibility.empty() || std::abs(n) > visibility_neighbors) return nullptr;
    const auto& m = visibility[static_cast<std::size_t>(i)][static_cast<std::size_t>(n + visibility_neighbors)];
    return m.empty() ? nullptr : &m;
  }

  void validate() const {
    const std::size_t t = blurry.size();
    if (t < 2) throw Error("need >= 2 frames");
    if (latent.size() != t || fwd.size() != t || bwd.size() != t || duty.size() != t)
      throw DimensionMismatch("sequence state lists differ in length");
    for (std::size_t i = 0; i < t; ++i) {
      require_same_size(blurry[i], blurry[0], "sequence state");
      require_same_size(latent[i], blurry[0], "sequence state");
      require_same_size(blurry[0], fwd[i], "sequence state");
      require_same_size(blurry[0], bwd[i], "sequence state");
      if (!(duty[i] > 0.0 && duty[i] <= 1.0)) throw Error("duty cycle must lie in (0, 1]");
    }
  }

  // Latent = blurry, zero flows.
  static SequenceState from_blurry(std::vector<Image> frames, double tau) {
    SequenceState s;
    s.latent = frames;
    s.blurry = std::move(frames);
    const std::size_t t = s.blurry.size();
    const int w = s.width();
    const int h = s.height();
    s.fwd.assign(t, FlowField(w, h));
    s.bwd.assign(t, FlowField(w, h));
    s.duty.assign(t, tau);
    return s;
  }
};

// Dual variables persisted across primal-dual iterations.
struct FlowDual {
  std::vector<double> ux, uy, vx, vy;

  FlowDual() = default;
  explicit FlowDual(std::size_t n) : ux(n, 0.0), uy(n, 0.0), vx(n, 0.0), vy(n, 0.0) {}
  [[nodiscard]] bool empty() const { return ux.empty(); }
};

struct DualState {
  int neighbors = 0;
  std::vector<VectorField> s;              // [frame]
  std::vector<std::vector<Image>> q;       // [frame][n + N]
  std::vector<std::array<FlowDual, 2>> p;  // [frame][direction > 0]

  DualState() = default;
  DualState(const SequenceState& st, int n) : neighbors(n) {
    const int t = st.frames();
    const Image zero(st.width(), st.height(), st.channels());
    s.assign(static_cast<std::size_t>(t), VectorField{zero, zero});
    q.assign(static_cast<std::size_t>(t), std::vector<Image>(static_cast<std::size_t>(2 * n + 1)));
    p.resize(static_cast<std::size_t>(t));
    for (int i = 0; i < t; ++i) {
      for (int k = -n; k <= n; ++k)
        if (k != 0 && i + k >= 0 && i + k < t) q[static_cast<std::size_t>(i)][static_cast<std::size_t>(k + n)] = zero;
      for (int d : {-1, 1})
        if (st.has_flow(i, d)) p[static_cast<std::size_t>(i)][d > 0 ? 1 : 0] = FlowDual(zero.pixel_count());
    }
  }

  Image& q_at(int i, int n) { return q[static_cast<std::size_t>(i)][static_cast<std::size_t>(n + neighbors)]; }
  [[nodiscard]] const Image& q_at(int i, int n) const {
    return q[static_cast<std::size_t>(i)][static_cast<std::size_t>(n + neighbors)];
  }
  FlowDual& p_at(int i, int direction) { return p[static_cast<std::size_t>(i)][direction > 0 ? 1 : 0]; }
};

}  // namespace flowdeblur
