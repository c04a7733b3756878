#pragma once

// Coarse-to-fine support: bicubic resampling, pyramid construction and
// propagation of latent frames and flows to the next finer level.

#include <algorithm>
#include <cmath>
#include <vector>

#include "core.hpp"

namespace flowdeblur {

namespace detail {

// Keys cubic convolution kernel, a = -0.5.
inline double cubic_weight(double t) {
  t = std::abs(t);
  if (t <= 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
  if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}

template <typename Fetch>
double bicubic_at(int width, int height, double x, double y, Fetch&& fetch) {
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  double acc = 0.0;
  for (int j = -1; j <= 2; ++j) {
    const double wy = cubic_weight(y - (y0 + j));
    if (wy == 0.0) continue;
    const int yy = std::clamp(y0 + j, 0, height - 1);
    for (int i = -1; i <= 2; ++i) {
      const double wx = cubic_weight(x - (x0 + i));
      if (wx == 0.0) continue;
      acc += wx * wy * fetch(std::clamp(x0 + i, 0, width - 1), yy);
    }
  }
  return acc;
}

}  // namespace detail

// Bicubic resampling with pixel-center alignment and clamp-to-edge.
inline Image resize_bicubic(const Image& img, int w, int h) {
  Image out(w, h, img.channels);
  const double sx = static_cast<double>(img.width) / w;
  const double sy = static_cast<double>(img.height) / h;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double px = (x + 0.5) * sx - 0.5;
      const double py = (y + 0.5) * sy - 0.5;
      for (int c = 0; c < img.channels; ++c)
        out.at(x, y, c) =
            detail::bicubic_at(img.width, img.height, px, py, [&](int a, int b) { return img.at(a, b, c); });
    }
  return out;
}

// Resamples a flow field and rescales its vectors to the new pixel units.
inline FlowField resize_flow(const FlowField& f, int w, int h) {
  FlowField out(w, h);
  const double sx = static_cast<double>(f.width) / w;
  const double sy = static_cast<double>(f.height) / h;
  const double ux = static_cast<double>(w) / f.width;
  const double vy = static_cast<double>(h) / f.height;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double px = (x + 0.5) * sx - 0.5;
      const double py = (y + 0.5) * sy - 0.5;
      const double u = detail::bicubic_at(f.width, f.height, px, py, [&](int a, int b) { return f.u[f.index(a, b)]; });
      const double v = detail::bicubic_at(f.width, f.height, px, py, [&](int a, int b) { return f.v[f.index(a, b)]; });
      out.set(x, y, {u * ux, v * vy});
    }
  return out;
}

// Anti-aliased downsampling for pyramid construction.
inline Image downsample(const Image& img, int w, int h) {
  const double f = std::min(static_cast<double>(w) / img.width, static_cast<double>(h) / img.height);
  const double sigma = f < 1.0 ? 0.6 * std::sqrt(1.0 / (f * f) - 1.0) : 0.0;
  return resize_bicubic(gaussian_blur(img, sigma), w, h);
}

struct LevelShape {
  int width = 0;
  int height = 0;
  double scale = 1.0;  // relative to the finest level
};

// Level shapes ordered coarsest first. The count is the requested one capped
// so that the smaller side stays >= 8 px.
inline std::vector<LevelShape> pyramid_shapes(int width, int height, double scale, int requested) {
  if (width < 1 || height < 1) throw Error("pyramid: empty frame");
  if (!(scale > 0.0 && scale < 1.0)) throw Error("pyramid: scale must lie in (0, 1)");
  std::vector<LevelShape> fine_first;
  for (int k = 0; k < std::max(requested, 1); ++k) {
    const double s = std::pow(scale, k);
    const LevelShape l{static_cast<int>(std::lround(width * s)), static_cast<int>(std::lround(height * s)), s};
    if (k > 0 && std::min(l.width, l.height) < 8) break;
    fine_first.push_back(k == 0 ? LevelShape{width, height, 1.0} : l);
  }
  return {fine_first.rbegin(), fine_first.rend()};
}

struct PyramidLevel {
  LevelShape shape;
  std::vector<Image> frames;
};

inline std::vector<PyramidLevel> build_pyramid(const std::vector<Image>& frames, double scale, int levels) {
  if (frames.empty()) throw Error("build_pyramid: no frames");
  for (const Image& f : frames) require_same_size(f, frames.front(), "build_pyramid");
  const auto shapes = pyramid_shapes(frames.front().width, frames.front().height, scale, levels);
  std::vector<PyramidLevel> out;
  for (const LevelShape& s : shapes) {
    PyramidLevel lvl{s, {}};
    for (const Image& f : frames)
      lvl.frames.push_back(s.width == f.width && s.height == f.height ? f : downsample(f, s.width, s.height));
    out.push_back(std::move(lvl));
  }
  return out;
}

// Carries latent frames and flows to a finer level; blurry frames and duty
// cycles of the target are taken from `target_blurry`. The latent frame is the
// finer blurry frame plus the upsampled correction L - B of the coarser level,
// so detail present in the finer observation is kept.
inline SequenceState propagate(const SequenceState& st, const std::vector<Image>& target_blurry) {
  if (target_blurry.size() != st.blurry.size()) throw DimensionMismatch("propagate: frame count differs");
  const int w = target_blurry.front().width;
  const int h = target_blurry.front().height;
  if (w < st.width() || h < st.height()) throw Error("propagate: target level must be finer");
  SequenceState out;
  out.blurry = target_blurry;
  out.duty = st.duty;
  out.blur_samples = st.blur_samples;
  for (std::size_t i = 0; i < st.blurry.size(); ++i) {
    Image delta = st.latent[i];
    for (std::size_t k = 0; k < delta.data.size(); ++k) delta.data[k] -= st.blurry[i].data[k];
    Image latent = resize_bicubic(delta, w, h);
    for (std::size_t k = 0; k < latent.data.size(); ++k) latent.data[k] += target_blurry[i].data[k];
    out.latent.push_back(std::move(latent));
    out.fwd.push_back(resize_flow(st.fwd[i], w, h));
    out.bwd.push_back(resize_flow(st.bwd[i], w, h));
  }
  return out;
}

}  // namespace flowdeblur
