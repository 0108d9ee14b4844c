#pragma once

#include <algorithm>
#include <cmath>
#include <random>

#include "modgen/pose_modalities.hpp"

namespace modgen::testing {

// Joints scattered over and slightly beyond the frame, random confidences.
inline PoseSkeleton random_skeleton(std::mt19937& rng, int h, int w) {
  std::uniform_real_distribution<double> ux(-10.0, w + 10.0), uy(-10.0, h + 10.0), uc(0.0, 1.0);
  PoseSkeleton s;
  s.height = h;
  s.width = w;
  for (auto& j : s.joints) j = {ux(rng), uy(rng), uc(rng)};
  return s;
}

// Direct per-pixel evaluation, independent of the renderer's loop order.
inline double naive_heatmap(const PoseSkeleton& s, double sigma, int x, int y) {
  double best = 0.0;
  for (const Joint& j : s.joints) {
    const double r2 = (x - j.x) * (x - j.x) + (y - j.y) * (y - j.y);
    best = std::max(best, j.c * std::exp(-r2 / (2.0 * sigma * sigma)));
  }
  return best;
}

}  // namespace modgen::testing
