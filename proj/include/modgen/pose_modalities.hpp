#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "modgen/errors.hpp"
#include "modgen/tensor.hpp"

namespace modgen {

inline constexpr int kNumJoints = 17;
inline constexpr int kNumModalities = 4;

enum class Modality : int { kRgb = 0, kHeatmaps = 1, kLimbs = 2, kFlow = 3 };

inline constexpr std::array<const char*, kNumModalities> kModalityNames = {"rgb", "heatmaps",
                                                                          "limbs", "flow"};

inline const char* modality_name(Modality m) { return kModalityNames[static_cast<int>(m)]; }

struct Joint {
  double x = 0.0;  // column, pixels
  double y = 0.0;  // row, pixels
  double c = 0.0;  // confidence
};

struct PoseSkeleton {
  std::array<Joint, kNumJoints> joints{};
  int height = 0;
  int width = 0;

  void validate() const {
    require(height > 0 && width > 0, "skeleton frame size must be positive");
    for (int i = 0; i < kNumJoints; ++i) {
      const Joint& j = joints[i];
      require(std::isfinite(j.x) && std::isfinite(j.y),
              "joint " + std::to_string(i) + " has non-finite coordinates");
      require(j.c >= 0.0 && j.c <= 1.0,
              "joint " + std::to_string(i) + " confidence outside [0,1]");
    }
  }
};

struct SkeletonEdges {
  std::vector<std::pair<int, int>> edges;

  void validate() const {
    for (const auto& [a, b] : edges) {
      require(a >= 0 && a < kNumJoints && b >= 0 && b < kNumJoints,
              "skeleton edge index out of range");
      require(a != b, "skeleton edge is a self-loop");
    }
  }
};

// The standard COCO 17-keypoint limb topology (also shipped as data/coco17_edges.csv).
inline SkeletonEdges coco17_edges() {
  return SkeletonEdges{{{15, 13}, {13, 11}, {16, 14}, {14, 12}, {11, 12}, {5, 11}, {6, 12},
                        {5, 6},   {5, 7},   {6, 8},   {7, 9},   {8, 10},  {1, 2},  {0, 1},
                        {0, 2},   {1, 3},   {2, 4},   {3, 5},   {4, 6}}};
}

// Reads "a,b" rows; '#' lines and the header are skipped.
inline SkeletonEdges load_edges(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open edge file " + path.string());
  SkeletonEdges out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line == "a,b") continue;
    std::istringstream row(line);
    int a = 0, b = 0;
    char comma = 0;
    if (!(row >> a >> comma >> b) || comma != ',')
      throw DataError("malformed edge row '" + line + "' in " + path.string());
    out.edges.emplace_back(a, b);
  }
  try {
    out.validate();
  } catch (const std::invalid_argument& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  return out;
}

// Single-channel H x W plane.
using Plane = Tensor<float>;

// h(x, y) = max_i c_i * exp(-((x - x_i)^2 + (y - y_i)^2) / (2 sigma^2))
inline Plane render_heatmaps(const PoseSkeleton& skeleton, double sigma) {
  require(sigma > 0.0, "render_heatmaps: sigma must be positive");
  skeleton.validate();
  const int h = skeleton.height, w = skeleton.width;
  Plane out(Shape{h, w});
  const double inv = 1.0 / (2.0 * sigma * sigma);
  for (const Joint& j : skeleton.joints) {
    if (j.c <= 0.0) continue;
    for (int y = 0; y < h; ++y) {
      const double dy = y - j.y;
      for (int x = 0; x < w; ++x) {
        const double dx = x - j.x;
        const float v = static_cast<float>(std::exp(-(dx * dx + dy * dy) * inv) * j.c);
        float& dst = out[static_cast<Index>(y) * w + x];
        if (v > dst) dst = v;
      }
    }
  }
  return out;
}

namespace detail {

// Square brush of side `width` anchored so odd widths are centred.
inline void stamp(Plane& plane, int h, int w, int cx, int cy, int width, float value) {
  const int lo = -(width - 1) / 2;
  for (int oy = lo; oy < lo + width; ++oy) {
    const int y = cy + oy;
    if (y < 0 || y >= h) continue;
    for (int ox = lo; ox < lo + width; ++ox) {
      const int x = cx + ox;
      if (x < 0 || x >= w) continue;
      float& dst = plane[static_cast<Index>(y) * w + x];
      if (value > dst) dst = value;
    }
  }
}

inline void draw_line(Plane& plane, int h, int w, long x0, long y0, long x1, long y1, int width,
                      float value) {
  // A Bresenham path stays inside the endpoints' bounding box.
  const long margin = width;
  if ((x0 < -margin && x1 < -margin) || (y0 < -margin && y1 < -margin) ||
      (x0 >= w + margin && x1 >= w + margin) || (y0 >= h + margin && y1 >= h + margin))
    return;
  const long dx = std::labs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const long dy = -std::labs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  long err = dx + dy;
  while (true) {
    stamp(plane, h, w, static_cast<int>(x0), static_cast<int>(y0), width, value);
    if (x0 == x1 && y0 == y1) break;
    const long e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace detail

// Each edge is a Bresenham segment between rounded joint positions with
// intensity min(c_a, c_b); overlaps keep the per-pixel maximum.
inline Plane render_limbs(const PoseSkeleton& skeleton, const SkeletonEdges& edges,
                          int line_width) {
  require(line_width >= 1, "render_limbs: line_width must be >= 1");
  skeleton.validate();
  edges.validate();
  const int h = skeleton.height, w = skeleton.width;
  Plane out(Shape{h, w});
  for (const auto& [a, b] : edges.edges) {
    const Joint& ja = skeleton.joints[a];
    const Joint& jb = skeleton.joints[b];
    const float value = static_cast<float>(std::min(ja.c, jb.c));
    if (value <= 0.0f) continue;
    detail::draw_line(out, h, w, std::lround(ja.x), std::lround(ja.y), std::lround(jb.x),
                      std::lround(jb.y), line_width, value);
  }
  return out;
}

// H x W x 3 image with values in [0, 1].
struct ModalityImage {
  Tensor<float> pixels;
  Modality modality = Modality::kRgb;

  int height() const { return static_cast<int>(pixels.dim(0)); }
  int width() const { return static_cast<int>(pixels.dim(1)); }
};

// Replicates a single-channel rendering into three identical channels.
inline ModalityImage to_modality_image(const Plane& raw, Modality modality, int height,
                                       int width) {
  require(raw.rank() == 2 && raw.dim(0) == height && raw.dim(1) == width,
          "to_modality_image: expected " + std::to_string(height) + "x" + std::to_string(width) +
              " plane, got " + shape_string(raw.shape()));
  ModalityImage img{Tensor<float>(Shape{height, width, 3}), modality};
  for (Index i = 0; i < raw.numel(); ++i) {
    const float v = std::clamp(raw[i], 0.0f, 1.0f);
    img.pixels[3 * i] = img.pixels[3 * i + 1] = img.pixels[3 * i + 2] = v;
  }
  return img;
}

// --- keypoint files -------------------------------------------------------
// One row per frame: frame_index, then x_j, y_j, c_j for j = 0..16.

inline void write_keypoints_csv(const std::filesystem::path& path,
                                const std::vector<PoseSkeleton>& frames) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "frame_index";
  for (int j = 0; j < kNumJoints; ++j) out << ",x" << j << ",y" << j << ",c" << j;
  out << '\n';
  char buf[64];
  for (std::size_t f = 0; f < frames.size(); ++f) {
    out << f;
    for (const Joint& jt : frames[f].joints) {
      std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%.6f", jt.x, jt.y, jt.c);
      out << buf;
    }
    out << '\n';
  }
  if (!out) throw DataError("failed writing " + path.string());
}

inline std::vector<PoseSkeleton> read_keypoints_csv(const std::filesystem::path& path, int height,
                                                    int width) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open keypoint file " + path.string());
  std::string line;
  std::vector<PoseSkeleton> frames;
  std::getline(in, line);  // header
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream row(line);
    long index = 0;
    PoseSkeleton s;
    s.height = height;
    s.width = width;
    bool ok = static_cast<bool>(row >> index);
    for (Joint& jt : s.joints) ok = ok && static_cast<bool>(row >> jt.x >> jt.y >> jt.c);
    if (!ok || index != static_cast<long>(frames.size()))
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed keypoint row");
    try {
      s.validate();
    } catch (const std::invalid_argument& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    frames.push_back(s);
  }
  return frames;
}

}  // namespace modgen
