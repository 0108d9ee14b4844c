#pragma once

#include <cmath>
#include <numbers>
#include <random>
#include <utility>

#include "modgen/optical_flow.hpp"

namespace modgen::testing {

// Sum of low-frequency sinusoids with integer periods: smooth and exactly
// periodic, so a wraparound shift is the ground-truth translation.
inline Plane periodic_texture(std::mt19937& rng, int h, int w, int waves = 12) {
  std::uniform_int_distribution<int> freq(1, 4);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi), amp(0.5, 1.0);
  Plane out(Shape{h, w});
  std::vector<double> acc(static_cast<std::size_t>(h) * w, 0.0);
  double total = 0.0;
  for (int k = 0; k < waves; ++k) {
    const int fx = freq(rng), fy = freq(rng) - 2;
    const double p = phase(rng), a = amp(rng);
    total += a;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        acc[y * w + x] += a * std::sin(2.0 * std::numbers::pi * (fx * x / double(w) + fy * y / double(h)) + p);
  }
  for (std::size_t i = 0; i < acc.size(); ++i)
    out[static_cast<Index>(i)] = static_cast<float>(0.5 + 0.5 * acc[i] / total);
  return out;
}

// next(x, y) = prev(x - dx, y - dy) with wraparound: content moves by (dx, dy).
inline Plane roll(const Plane& p, int dx, int dy) {
  const int h = static_cast<int>(p.dim(0)), w = static_cast<int>(p.dim(1));
  Plane out(p.shape());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int sx = ((x - dx) % w + w) % w, sy = ((y - dy) % h + h) % h;
      out[static_cast<Index>(y) * w + x] = p[static_cast<Index>(sy) * w + sx];
    }
  return out;
}

inline std::pair<double, double> mean_flow(const FlowField& f, int margin) {
  const int h = static_cast<int>(f.dim(0)), w = static_cast<int>(f.dim(1));
  double u = 0, v = 0;
  int n = 0;
  for (int y = margin; y < h - margin; ++y)
    for (int x = margin; x < w - margin; ++x) {
      u += f[(static_cast<Index>(y) * w + x) * 2];
      v += f[(static_cast<Index>(y) * w + x) * 2 + 1];
      ++n;
    }
  return {u / n, v / n};
}

// Mean endpoint error against a constant ground-truth displacement.
inline double mean_endpoint_error(const FlowField& f, double du, double dv, int margin) {
  const int h = static_cast<int>(f.dim(0)), w = static_cast<int>(f.dim(1));
  double err = 0;
  int n = 0;
  for (int y = margin; y < h - margin; ++y)
    for (int x = margin; x < w - margin; ++x) {
      const Index i = (static_cast<Index>(y) * w + x) * 2;
      err += std::hypot(f[i] - du, f[i + 1] - dv);
      ++n;
    }
  return err / n;
}

}  // namespace modgen::testing
