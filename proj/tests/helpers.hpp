#pragma once

// Random instances and dense reference operators shared by the tests.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "flowdeblur/flowdeblur.hpp"

namespace fdtest {

using flowdeblur::FlowField;
using flowdeblur::Image;

inline Image random_image(std::mt19937_64& rng, int w, int h, int c = 1, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  Image img(w, h, c);
  for (double& v : img.data) v = d(rng);
  return img;
}

// Smooth random image: blurred noise, rescaled to [0.1, 0.9].
inline Image smooth_image(std::mt19937_64& rng, int w, int h, double sigma = 1.5, int c = 1) {
  Image img = flowdeblur::gaussian_blur(random_image(rng, w, h, c), sigma);
  double lo = 1e9;
  double hi = -1e9;
  for (double v : img.data) lo = std::min(lo, v), hi = std::max(hi, v);
  for (double& v : img.data) v = 0.1 + 0.8 * (v - lo) / std::max(hi - lo, 1e-12);
  return img;
}

// Smooth random flow with magnitudes up to max_mag.
inline FlowField smooth_flow(std::mt19937_64& rng, int w, int h, double max_mag) {
  const Image a = smooth_image(rng, w, h, 2.0);
  const Image b = smooth_image(rng, w, h, 2.0);
  FlowField f(w, h);
  for (std::size_t k = 0; k < f.pixel_count(); ++k) {
    f.u[k] = max_mag * (2.0 * (a.data[k] - 0.1) / 0.8 - 1.0) / std::sqrt(2.0);
    f.v[k] = max_mag * (2.0 * (b.data[k] - 0.1) / 0.8 - 1.0) / std::sqrt(2.0);
  }
  return f;
}

inline Eigen::VectorXd to_vec(const Image& img) {
  return Eigen::Map<const Eigen::VectorXd>(img.data.data(), static_cast<Eigen::Index>(img.data.size()));
}

inline Image from_vec(const Eigen::VectorXd& v, int w, int h, int c = 1) {
  Image img(w, h, c);
  for (std::size_t k = 0; k < img.data.size(); ++k) img.data[k] = v(static_cast<Eigen::Index>(k));
  return img;
}

// Dense matrix of a linear image operator, built column by column.
inline Eigen::MatrixXd dense_matrix(const std::function<Image(const Image&)>& op, int w, int h, int c = 1) {
  const Eigen::Index n = static_cast<Eigen::Index>(w) * h * c;
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Image e(w, h, c);
    e.data[static_cast<std::size_t>(j)] = 1.0;
    m.col(j) = to_vec(op(e));
  }
  return m;
}

inline double max_abs_diff(const Image& a, const Image& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.data.size(); ++k) m = std::max(m, std::abs(a.data[k] - b.data[k]));
  return m;
}

// Five frames of a textured pattern translating by (vx, vy) per frame, with
// the exact flows (clamped sampling at the borders).
struct Translating {
  std::vector<Image> frames;
  std::vector<FlowField> fwd;
  std::vector<FlowField> bwd;
};

inline Translating translating_sequence(std::mt19937_64& rng, int w, int h, int t, double vx, double vy) {
  const Image base = smooth_image(rng, w + 40, h + 40, 1.2);
  Translating s;
  for (int i = 0; i < t; ++i) {
    Image f(w, h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) f.at(x, y) = flowdeblur::sample_bilinear(base, x + 20 - i * vx, y + 20 - i * vy);
    s.frames.push_back(f);
    s.fwd.emplace_back(w, h, i + 1 < t ? vx : 0.0, i + 1 < t ? vy : 0.0);
    s.bwd.emplace_back(w, h, i > 0 ? -vx : 0.0, i > 0 ? -vy : 0.0);
  }
  return s;
}

}  // namespace fdtest
