#pragma once

// Synthetic ground truth (textured scenes under known motion, blurred with
// the forward model) and the metrics used to score restorations and flows.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "blur.hpp"
#include "core.hpp"

namespace flowdeblur {

enum class Shape { Rect, Disk };

struct SceneObject {
  Shape shape = Shape::Rect;
  Vec2 size{20.0, 20.0};     // rect: width/height; disk: size.x is the diameter
  Vec2 position{40.0, 32.0};  // center at frame 0
  Vec2 velocity{-3.0, 0.0};   // displacement per frame
  std::uint64_t texture_seed = 2;
  double mean = 0.7;  // mean intensity of the object texture
};

// Background points move with constant velocity A x0 + b, where x0 is the
// point's position at frame 0.
struct BackgroundMotion {
  Vec2 translation{1.0, 0.0};
  std::array<double, 4> affine{0.0, 0.0, 0.0, 0.0};  // row-major A
};

struct SceneSpec {
  int width = 64;
  int height = 64;
  int frames = 5;
  int channels = 1;
  double tau = 0.8;
  std::uint64_t seed = 1;
  double texture_sigma = 1.5;
  double contrast = 0.18;
  double background_mean = 0.4;
  BackgroundMotion background;
  std::vector<SceneObject> objects{SceneObject{}};

  // The built-in demo: 5 frames, 64x64, a square moving (-3, 0) px/frame
  // over a background translating (1, 0) px/frame, duty cycle 0.8.
  static SceneSpec demo() { return SceneSpec{}; }
};

struct SyntheticScene {
  std::vector<Image> sharp;
  std::vector<FlowField> gt_fwd;  // zero for the last frame
  std::vector<FlowField> gt_bwd;  // zero for frame 0
  std::vector<std::vector<std::uint8_t>> object_mask;  // index of covering object + 1, 0 = background
  double tau = 1.0;
};

namespace detail {

// Band-limited seeded noise texture with the given mean.
class Texture {
 public:
  Texture(int w, int h, int channels, std::uint64_t seed, double sigma, double mean_level, double contrast,
          double origin_x, double origin_y)
      : grid_(w, h, channels), ox_(origin_x), oy_(origin_y) {
    std::mt19937_64 rng(seed);
    Image noise(w, h, channels);
    for (double& v : noise.data) v = static_cast<double>(rng() >> 11) * 0x1.0p-53 - 0.5;
    noise = gaussian_blur(noise, sigma);
    double mean = 0.0;
    for (double v : noise.data) mean += v;
    mean /= static_cast<double>(noise.data.size());
    double var = 0.0;
    for (double v : noise.data) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / static_cast<double>(noise.data.size()));
    for (std::size_t k = 0; k < noise.data.size(); ++k)
      grid_.data[k] = std::clamp(mean_level + contrast * (noise.data[k] - mean) / (sd > 0 ? sd : 1.0), 0.0, 1.0);
  }

  [[nodiscard]] double at(double x, double y, int c) const { return sample_bilinear(grid_, x + ox_, y + oy_, c); }

 private:
  Image grid_;
  double ox_;
  double oy_;
};

inline bool inside(const SceneObject& o, Vec2 center, double x, double y) {
  const double dx = x - center.x;
  const double dy = y - center.y;
  if (o.shape == Shape::Rect) return std::abs(dx) <= o.size.x / 2.0 && std::abs(dy) <= o.size.y / 2.0;
  const double r = o.size.x / 2.0;
  return dx * dx + dy * dy <= r * r;
}

inline Vec2 object_center(const SceneObject& o, int frame) {
  return {o.position.x + frame * o.velocity.x, o.position.y + frame * o.velocity.y};
}

// Frame-0 position of the background point seen at x in frame t.
inline Vec2 background_origin(const BackgroundMotion& m, double x, double y, int t) {
  const double a = 1.0 + t * m.affine[0];
  const double b = t * m.affine[1];
  const double c = t * m.affine[2];
  const double d = 1.0 + t * m.affine[3];
  const double rx = x - t * m.translation.x;
  const double ry = y - t * m.translation.y;
  const double det = a * d - b * c;
  return {(d * rx - b * ry) / det, (-c * rx + a * ry) / det};
}

inline Vec2 background_velocity(const BackgroundMotion& m, Vec2 x0) {
  return {m.affine[0] * x0.x + m.affine[1] * x0.y + m.translation.x,
          m.affine[2] * x0.x + m.affine[3] * x0.y + m.translation.y};
}

}  // namespace detail

inline void validate_scene(const SceneSpec& s) {
  if (s.width < 8 || s.height < 8) throw Error("scene: canvas must be at least 8x8");
  if (s.frames < 2) throw Error("scene: need >= 2 frames");
  if (s.channels != 1 && s.channels != 3) throw Error("scene: channels must be 1 or 3");
  if (!(s.tau > 0.0 && s.tau <= 1.0)) throw Error("scene: duty cycle must lie in (0, 1]");
  auto check_motion = [](Vec2 v) {
    if (std::hypot(v.x, v.y) > 10.0) throw Error("scene: motion exceeds 10 px/frame");
  };
  check_motion(s.background.translation);
  for (const auto& o : s.objects) {
    check_motion(o.velocity);
    if (!(o.size.x > 0.0) || (o.shape == Shape::Rect && !(o.size.y > 0.0))) throw Error("scene: object size must be positive");
    const double hx = o.size.x / 2.0;
    const double hy = o.shape == Shape::Rect ? o.size.y / 2.0 : hx;
    for (int t = 0; t < s.frames; ++t) {
      const Vec2 c = detail::object_center(o, t);
      if (c.x - hx < 0.0 || c.y - hy < 0.0 || c.x + hx > s.width - 1 || c.y + hy > s.height - 1)
        throw Error("scene: object leaves the canvas");
    }
  }
  // Affine background motion of the canvas corners.
  for (double x : {0.0, s.width - 1.0})
    for (double y : {0.0, s.height - 1.0}) check_motion(detail::background_velocity(s.background, {x, y}));
}

inline SyntheticScene render_scene(const SceneSpec& spec) {
  validate_scene(spec);
  const int pad = 12 * spec.frames + 8;
  const detail::Texture bg(spec.width + 2 * pad, spec.height + 2 * pad, spec.channels, spec.seed, spec.texture_sigma,
                           spec.background_mean, spec.contrast, pad, pad);
  std::vector<detail::Texture> tex;
  for (const auto& o : spec.objects) {
    const int ow = static_cast<int>(std::ceil(o.size.x)) + 8;
    const int oh = static_cast<int>(std::ceil(o.shape == Shape::Rect ? o.size.y : o.size.x)) + 8;
    tex.emplace_back(ow, oh, spec.channels, o.texture_seed, spec.texture_sigma, o.mean, spec.contrast, ow / 2.0,
                     oh / 2.0);
  }
  SyntheticScene scene;
  scene.tau = spec.tau;
  for (int t = 0; t < spec.frames; ++t) {
    Image img(spec.width, spec.height, spec.channels);
    FlowField fwd(spec.width, spec.height);
    FlowField bwd(spec.width, spec.height);
    std::vector<std::uint8_t> mask(img.pixel_count(), 0);
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        int cover = -1;
        for (std::size_t k = 0; k < spec.objects.size(); ++k)
          if (detail::inside(spec.objects[k], detail::object_center(spec.objects[k], t), x, y)) cover = static_cast<int>(k);
        Vec2 vel;
        if (cover >= 0) {
          const SceneObject& o = spec.objects[static_cast<std::size_t>(cover)];
          const Vec2 c = detail::object_center(o, t);
          for (int ch = 0; ch < spec.channels; ++ch)
            img.at(x, y, ch) = tex[static_cast<std::size_t>(cover)].at(x - c.x, y - c.y, ch);
          vel = o.velocity;
          mask[fwd.index(x, y)] = static_cast<std::uint8_t>(cover + 1);
        } else {
          const Vec2 x0 = detail::background_origin(spec.background, x, y, t);
          for (int ch = 0; ch < spec.channels; ++ch) img.at(x, y, ch) = bg.at(x0.x, x0.y, ch);
          vel = detail::background_velocity(spec.background, x0);
        }
        if (t + 1 < spec.frames) fwd.set(x, y, vel);
        if (t > 0) bwd.set(x, y, {-vel.x, -vel.y});
      }
    scene.sharp.push_back(std::move(img));
    scene.gt_fwd.push_back(std::move(fwd));
    scene.gt_bwd.push_back(std::move(bwd));
    scene.object_mask.push_back(std::move(mask));
  }
  return scene;
}

// Blurry frames from the forward model with the ground-truth flows. With
// samples = 0 the generator uses four times the solver's default count.
inline std::vector<Image> synthesize_blur(const SyntheticScene& scene, int samples = 0, int threads = 1) {
  double mag = 0.0;
  for (std::size_t i = 0; i < scene.sharp.size(); ++i)
    mag = std::max({mag, max_flow_magnitude(scene.gt_fwd[i]), max_flow_magnitude(scene.gt_bwd[i])});
  const int s = samples > 0 ? samples : 4 * default_blur_samples(scene.tau, mag);
  std::vector<Image> out;
  for (int i = 0; i < static_cast<int>(scene.sharp.size()); ++i) {
    const KernelFlows kf = kernel_flows(scene.gt_fwd, scene.gt_bwd, i);
    out.push_back(apply_blur(scene.sharp[static_cast<std::size_t>(i)], kf.fwd, kf.bwd, {scene.tau, s}, threads));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Metrics.

using PixelMask = std::vector<std::uint8_t>;  // nonzero = evaluated

inline double epe(const FlowField& flow, const FlowField& gt, const std::optional<PixelMask>& mask = std::nullopt) {
  require_same_size(flow, gt, "epe");
  if (mask && mask->size() != flow.pixel_count()) throw DimensionMismatch("epe: mask size differs");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < flow.pixel_count(); ++k) {
    if (mask && !(*mask)[k]) continue;
    sum += std::hypot(flow.u[k] - gt.u[k], flow.v[k] - gt.v[k]);
    ++count;
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

// Pixels at least `border` px from the frame edge and, when gt is given, not
// within `band` px of a discontinuity of the ground-truth flow.
inline PixelMask interior_mask(int width, int height, int border, const FlowField* gt = nullptr, int band = 1) {
  PixelMask m(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), 0);
  for (int y = border; y < height - border; ++y)
    for (int x = border; x < width - border; ++x) {
      bool ok = true;
      if (gt) {
        const Vec2 c = gt->at(x, y);
        for (int dy = -band; dy <= band && ok; ++dy)
          for (int dx = -band; dx <= band && ok; ++dx) {
            const int xx = std::clamp(x + dx, 0, width - 1);
            const int yy = std::clamp(y + dy, 0, height - 1);
            const Vec2 n = gt->at(xx, yy);
            if (n.x != c.x || n.y != c.y) ok = false;
          }
      }
      m[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] = ok ? 1 : 0;
    }
  return m;
}

// 10 log10(1 / MSE); +infinity when the images are identical.
inline double psnr(const Image& img, const Image& ref) {
  require_same_size(img, ref, "psnr");
  double mse = 0.0;
  for (std::size_t k = 0; k < img.data.size(); ++k) {
    const double d = img.data[k] - ref.data[k];
    mse += d * d;
  }
  mse /= static_cast<double>(img.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

inline double mean_psnr(const std::vector<Image>& imgs, const std::vector<Image>& refs) {
  if (imgs.size() != refs.size() || imgs.empty()) throw DimensionMismatch("mean_psnr: frame counts differ");
  double s = 0.0;
  for (std::size_t i = 0; i < imgs.size(); ++i) s += psnr(imgs[i], refs[i]);
  return s / static_cast<double>(imgs.size());
}

// Middlebury color wheel: hue encodes direction, saturation the magnitude
// relative to max_mag (largest magnitude when absent), clipped at 1.
inline Image flow_to_color(const FlowField& flow, std::optional<double> max_mag = std::nullopt) {
  static const std::vector<std::array<double, 3>> wheel = [] {
    std::vector<std::array<double, 3>> w;
    const int ry = 15, yg = 6, gc = 4, cb = 11, bm = 13, mr = 6;
    for (int i = 0; i < ry; ++i) w.push_back({255.0, 255.0 * i / ry, 0.0});
    for (int i = 0; i < yg; ++i) w.push_back({255.0 - 255.0 * i / yg, 255.0, 0.0});
    for (int i = 0; i < gc; ++i) w.push_back({0.0, 255.0, 255.0 * i / gc});
    for (int i = 0; i < cb; ++i) w.push_back({0.0, 255.0 - 255.0 * i / cb, 255.0});
    for (int i = 0; i < bm; ++i) w.push_back({255.0 * i / bm, 0.0, 255.0});
    for (int i = 0; i < mr; ++i) w.push_back({255.0, 0.0, 255.0 - 255.0 * i / mr});
    return w;
  }();
  double maxr = max_mag.value_or(0.0);
  if (!max_mag)
    for (std::size_t k = 0; k < flow.pixel_count(); ++k) maxr = std::max(maxr, std::hypot(flow.u[k], flow.v[k]));
  Image out(flow.width, flow.height, 3, 1.0);
  if (maxr <= 0.0) return out;
  const int ncols = static_cast<int>(wheel.size());
  for (std::size_t k = 0; k < flow.pixel_count(); ++k) {
    const double u = flow.u[k];
    const double v = flow.v[k];
    const double rad = std::min(1.0, std::hypot(u, v) / maxr);
    const double a = std::atan2(-v, -u) / M_PI;
    const double fk = (a + 1.0) / 2.0 * (ncols - 1);
    const int k0 = static_cast<int>(std::floor(fk));
    const int k1 = (k0 + 1) % ncols;
    const double f = fk - k0;
    for (int c = 0; c < 3; ++c) {
      const double col = ((1.0 - f) * wheel[static_cast<std::size_t>(k0)][static_cast<std::size_t>(c)] +
                          f * wheel[static_cast<std::size_t>(k1)][static_cast<std::size_t>(c)]) /
                         255.0;
      out.data[k * 3 + static_cast<std::size_t>(c)] = 1.0 - rad * (1.0 - col);
    }
  }
  return out;
}

}  // namespace flowdeblur
