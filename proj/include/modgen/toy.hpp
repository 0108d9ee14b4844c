#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "modgen/dataset.hpp"
#include "modgen/extraction.hpp"
#include "modgen/image_io.hpp"
#include "modgen/pose_modalities.hpp"

namespace modgen {

inline const std::array<const char*, 10> kToyActions = {
    "wave", "clap", "jump", "squat", "walk", "kick", "arm_circles", "side_bend", "punch", "raise_arms"};

// Appearance of one rendered domain. Every random draw is made regardless of
// these values, so two domains with equal parameters render identically.
struct DomainAppearance {
  double background_texture = 0.0;  // amplitude of the background pattern
  double noise_level = 0.0;         // per-pixel Gaussian noise std
  std::array<double, 3> background_color{0.20, 0.30, 0.45};
  std::array<double, 3> actor_color{0.95, 0.95, 0.90};
  double color_jitter = 0.0;     // per-video tint amplitude
  double keypoint_jitter = 0.0;  // px std added to the written keypoints
  double min_confidence = 0.9;   // keypoint confidence ~ U[min_confidence, 1]

  void validate() const {
    require(background_texture >= 0.0 && noise_level >= 0.0 && color_jitter >= 0.0 &&
                keypoint_jitter >= 0.0,
            "toy appearance amplitudes must be >= 0");
    require(min_confidence >= 0.0 && min_confidence <= 1.0, "min_confidence must be in [0,1]");
  }
};

inline DomainAppearance default_synthetic_appearance() { return {}; }

inline DomainAppearance default_real_appearance() {
  DomainAppearance a;
  a.background_texture = 0.35;
  a.noise_level = 0.05;
  a.background_color = {0.55, 0.50, 0.42};
  a.actor_color = {0.80, 0.45, 0.30};
  a.color_jitter = 0.15;
  a.keypoint_jitter = 0.7;
  a.min_confidence = 0.5;
  return a;
}

struct ToyConfig {
  int num_actions = 10;
  int videos_per_action = 3;
  int frames_per_video = 180;
  int frame_size = 32;
  std::uint64_t seed = 0;
  std::vector<Domain> domains{Domain::kSynthetic, Domain::kReal};
  DomainAppearance synthetic = default_synthetic_appearance();
  DomainAppearance real = default_real_appearance();

  void validate() const {
    require(num_actions >= 1 && num_actions <= static_cast<int>(kToyActions.size()),
            "toy num_actions must be in 1..10");
    require(videos_per_action >= 1, "videos_per_action must be >= 1");
    require(frames_per_video >= 90, "frames_per_video must be >= 90");
    require(frame_size >= 16 && frame_size % 4 == 0, "toy frame_size must be a multiple of 4, >= 16");
    require(!domains.empty(), "toy dataset needs at least one domain");
    synthetic.validate();
    real.validate();
  }

  const DomainAppearance& appearance(Domain d) const { return d == Domain::kSynthetic ? synthetic : real; }
};

namespace toy {

// Joint angles measured from straight down; positive rotates away from the
// body midline. Offsets and lengths are in body units.
struct BodyPose {
  double dx = 0, dy = 0, lean = 0;
  double arm_l = 0.15, elbow_l = 0.1, arm_r = 0.15, elbow_r = 0.1;
  double leg_l = 0.08, knee_l = 0.0, leg_r = 0.08, knee_r = 0.0;
};

struct Motion {
  double freq = 1.0 / 24.0;  // cycles per frame
  double phase = 0.0;
  double amplitude = 1.0;
  double cx = 16, cy = 16, scale = 13;  // pixels
};

inline BodyPose action_pose(int action, double p, double a) {
  BodyPose b;
  const double s = std::sin(p), pos = std::max(0.0, s), half = 0.5 - 0.5 * std::cos(p);
  switch (action) {
    case 0:  // wave
      b.arm_r = 2.6;
      b.elbow_r = 0.7 * s * a;
      break;
    case 1:  // clap
      b.arm_l = b.arm_r = 1.3;
      b.elbow_l = b.elbow_r = -(0.9 + 0.7 * a * (0.5 + 0.5 * s));
      break;
    case 2:  // jump
      b.dy = -0.18 * pos * a;
      b.arm_l = b.arm_r = 0.3 + 2.2 * pos;
      b.knee_l = b.knee_r = 0.3 * (1.0 - pos);
      break;
    case 3:  // squat
      b.dy = 0.25 * half * a;
      b.leg_l = b.leg_r = 0.08 + 0.35 * half;
      b.knee_l = b.knee_r = 0.7 * half;
      b.arm_l = b.arm_r = 0.3 + 1.0 * half;
      break;
    case 4:  // walk
      b.dx = 0.3 * std::sin(0.5 * p) * a;
      b.leg_l = 0.08 + 0.35 * s;
      b.leg_r = 0.08 - 0.35 * s;
      b.arm_l = 0.2 - 0.3 * s;
      b.arm_r = 0.2 + 0.3 * s;
      break;
    case 5:  // kick
      b.leg_r = 0.08 + 1.2 * pos * a;
      b.knee_r = 0.5 * pos * (1.0 - pos);
      b.arm_l = b.arm_r = 0.6;
      break;
    case 6:  // arm circles
      b.arm_l = b.arm_r = p;
      b.elbow_l = b.elbow_r = 0.0;
      break;
    case 7:  // side bend
      b.lean = 0.45 * s * a;
      break;
    case 8:  // punch
      b.arm_l = b.arm_r = 1.5;
      b.elbow_l = -1.3 * (0.5 + 0.5 * s);
      b.elbow_r = -1.3 * (0.5 - 0.5 * s);
      break;
    default:  // raise arms
      b.arm_l = b.arm_r = 0.2 + 2.6 * half * a;
      break;
  }
  return b;
}

// COCO-17 joints in pixels; the figure's left side is the image's right.
inline std::array<std::array<double, 2>, kNumJoints> forward_kinematics(const BodyPose& b, const Motion& m) {
  std::array<std::array<double, 2>, kNumJoints> j{};
  const double px = b.dx, py = b.dy;
  const double cl = std::cos(b.lean), sl = std::sin(b.lean);
  auto upper = [&](double x, double y) -> std::array<double, 2> {
    return {px + x * cl - y * sl, py + x * sl + y * cl};
  };
  auto dir = [&](double angle, double side, bool leaned) -> std::array<double, 2> {
    const double x = side * std::sin(angle), y = std::cos(angle);
    if (!leaned) return {x, y};
    return {x * cl - y * sl, x * sl + y * cl};
  };
  const auto head = upper(0.0, -0.82);
  j[0] = {head[0], head[1] + 0.02};
  j[1] = upper(0.04, -0.85);
  j[2] = upper(-0.04, -0.85);
  j[3] = upper(0.08, -0.82);
  j[4] = upper(-0.08, -0.82);
  j[5] = upper(0.18, -0.58);
  j[6] = upper(-0.18, -0.58);
  auto limb = [&](int root, int mid, int tip, double a1, double a2, double side, double l1, double l2,
                  bool leaned) {
    const auto d1 = dir(a1, side, leaned), d2 = dir(a1 + a2, side, leaned);
    j[mid] = {j[root][0] + l1 * d1[0], j[root][1] + l1 * d1[1]};
    j[tip] = {j[mid][0] + l2 * d2[0], j[mid][1] + l2 * d2[1]};
  };
  limb(5, 7, 9, b.arm_l, b.elbow_l, 1.0, 0.28, 0.25, true);
  limb(6, 8, 10, b.arm_r, b.elbow_r, -1.0, 0.28, 0.25, true);
  j[11] = {px + 0.10, py};
  j[12] = {px - 0.10, py};
  limb(11, 13, 15, b.leg_l, -b.knee_l, 1.0, 0.42, 0.42, false);
  limb(12, 14, 16, b.leg_r, -b.knee_r, -1.0, 0.42, 0.42, false);
  for (auto& p : j) p = {m.cx + m.scale * p[0], m.cy + m.scale * p[1]};
  return j;
}

// Body segments drawn into the RGB frame (head drawn separately).
inline constexpr std::array<std::array<int, 2>, 12> kBodySegments = {{{5, 7}, {7, 9}, {6, 8}, {8, 10}, {5, 6},
                                                                       {11, 12}, {11, 13}, {13, 15}, {12, 14},
                                                                       {14, 16}, {5, 11}, {6, 12}}};

inline double segment_distance(double x, double y, const std::array<double, 2>& a, const std::array<double, 2>& b) {
  const double vx = b[0] - a[0], vy = b[1] - a[1];
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((x - a[0]) * vx + (y - a[1]) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(x - a[0] - t * vx, y - a[1] - t * vy);
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = seed ^ 0x9E3779B97F4A7C15ULL;
  for (std::uint64_t v : {a, b, c}) {
    h ^= v + 0x9E3779B97F4A7C15ULL + (h << 6) + (h >> 2);
    h *= 0xBF58476D1CE4E5B9ULL;
    h ^= h >> 31;
  }
  return h;
}

struct VideoAppearance {
  std::vector<float> background;  // H x W x 3
  std::array<double, 3> actor{};
  std::array<double, 3> head{};
};

inline VideoAppearance make_appearance(const DomainAppearance& d, std::mt19937_64& rng, int size) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::array<double, 3> tint{};
  for (auto& t : tint) t = u(rng) * 2.0 - 1.0;
  // Background pattern: a few oriented sinusoids plus two rectangles.
  struct Wave { double fx, fy, ph; std::array<double, 3> col; };
  std::vector<Wave> waves(4);
  for (auto& w : waves) {
    w.fx = (u(rng) * 2.0 - 1.0) * 0.5;
    w.fy = (u(rng) * 2.0 - 1.0) * 0.5;
    w.ph = u(rng) * 2.0 * std::numbers::pi;
    for (auto& c : w.col) c = u(rng) * 2.0 - 1.0;
  }
  struct Rect { double x0, y0, x1, y1; std::array<double, 3> col; };
  std::vector<Rect> rects(2);
  for (auto& r : rects) {
    const double x = u(rng) * size, y = u(rng) * size, w = (0.15 + 0.3 * u(rng)) * size, h = (0.15 + 0.3 * u(rng)) * size;
    r = {x, y, x + w, y + h, {}};
    for (auto& c : r.col) c = u(rng) * 2.0 - 1.0;
  }
  VideoAppearance out;
  out.background.resize(static_cast<std::size_t>(size) * size * 3);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      for (int c = 0; c < 3; ++c) {
        double v = d.background_color[c] + d.color_jitter * 0.5 * tint[c];
        double pattern = 0.0;
        for (const auto& w : waves) pattern += 0.25 * w.col[c] * std::sin(w.fx * x + w.fy * y + w.ph);
        for (const auto& r : rects)
          if (x >= r.x0 && x < r.x1 && y >= r.y0 && y < r.y1) pattern += 0.5 * r.col[c];
        v += d.background_texture * pattern;
        out.background[(static_cast<std::size_t>(y) * size + x) * 3 + c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
  for (int c = 0; c < 3; ++c) {
    out.actor[c] = std::clamp(d.actor_color[c] + d.color_jitter * tint[(c + 1) % 3], 0.0, 1.0);
    out.head[c] = std::clamp(0.85 * out.actor[c] + 0.1, 0.0, 1.0);
  }
  return out;
}

inline Tensor<float> render_frame(const std::array<std::array<double, 2>, kNumJoints>& joints,
                                  const VideoAppearance& app, double scale, int size) {
  Tensor<float> img(Shape{size, size, 3});
  const double limb_r = std::max(0.6, 0.07 * scale), head_r = std::max(1.2, 0.13 * scale);
  const std::array<double, 2> head{joints[0][0], joints[0][1] - 0.02 * scale};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double cx = x, cy = y;
      double body = 0.0;
      for (const auto& s : kBodySegments)
        body = std::max(body, std::clamp(limb_r + 0.5 - segment_distance(cx, cy, joints[s[0]], joints[s[1]]), 0.0, 1.0));
      const double hd = std::clamp(head_r + 0.5 - std::hypot(cx - head[0], cy - head[1]), 0.0, 1.0);
      for (int c = 0; c < 3; ++c) {
        const std::size_t i = (static_cast<std::size_t>(y) * size + x) * 3 + c;
        double v = app.background[i];
        v = v * (1.0 - body) + app.actor[c] * body;
        v = v * (1.0 - hd) + app.head[c] * hd;
        img[static_cast<Index>(i)] = static_cast<float>(v);
      }
    }
  return img;
}

}  // namespace toy

// Renders the two-domain stick-figure benchmark. Every (domain, video) pair
// is its own performance of the action, and the domains also differ in
// appearance and keypoint quality. Writes
// RGB frames, keypoints.csv and labels.csv, then extracts the derived streams.
inline DatasetIndex make_toy_dataset(const ToyConfig& cfg, const std::filesystem::path& out,
                                     const ExtractConfig& extract_cfg) {
  namespace fs = std::filesystem;
  cfg.validate();
  extract_cfg.validate();
  fs::create_directories(out);
  std::vector<std::string> names(kToyActions.begin(), kToyActions.begin() + cfg.num_actions);
  write_labels_csv(out / "labels.csv", names);
  const int size = cfg.frame_size;
  for (Domain domain : cfg.domains) {
    const DomainAppearance& look = cfg.appearance(domain);
    for (int a = 0; a < cfg.num_actions; ++a) {
      for (int v = 0; v < cfg.videos_per_action; ++v) {
        char vid[96];
        std::snprintf(vid, sizeof(vid), "%s_%s_%03d", domain_name(domain), names[a].c_str(), v);
        const fs::path dir = out / domain_name(domain) / names[a] / vid;
        fs::create_directories(dir / "rgb");

        // Each (domain, video) is a separate performance.
        const std::uint64_t d = static_cast<std::uint64_t>(domain);
        std::mt19937_64 motion_rng(toy::mix_seed(cfg.seed, 1 + 2 * d, a, v));
        std::uniform_real_distribution<double> u(0.0, 1.0);
        toy::Motion m;
        m.freq = 1.0 / (20.0 + 8.0 * u(motion_rng));
        m.phase = 2.0 * std::numbers::pi * u(motion_rng);
        m.amplitude = 0.9 + 0.2 * u(motion_rng);
        m.cx = size * (0.5 + 0.12 * (u(motion_rng) - 0.5));
        m.cy = size * (0.5 + 0.06 * (u(motion_rng) - 0.5));
        m.scale = size * (0.42 + 0.04 * (u(motion_rng) - 0.5));

        std::mt19937_64 look_rng(toy::mix_seed(cfg.seed, 2 + 2 * d, a, v));
        const toy::VideoAppearance app = toy::make_appearance(look, look_rng, size);
        std::normal_distribution<double> gauss(0.0, 1.0);

        std::vector<PoseSkeleton> skeletons;
        for (int f = 0; f < cfg.frames_per_video; ++f) {
          const double p = 2.0 * std::numbers::pi * m.freq * f + m.phase;
          const auto joints = toy::forward_kinematics(toy::action_pose(a, p, m.amplitude), m);
          Tensor<float> img = toy::render_frame(joints, app, m.scale, size);
          for (auto& px : img.storage())
            px = std::clamp(px + static_cast<float>(look.noise_level * gauss(look_rng)), 0.0f, 1.0f);
          write_png(dir / "rgb" / frame_filename(f), img);
          PoseSkeleton s;
          s.height = s.width = size;
          for (int j = 0; j < kNumJoints; ++j) {
            const double jx = gauss(look_rng), jy = gauss(look_rng), jc = u(look_rng);
            s.joints[j] = {joints[j][0] + look.keypoint_jitter * jx, joints[j][1] + look.keypoint_jitter * jy,
                           look.min_confidence + (1.0 - look.min_confidence) * jc};
          }
          skeletons.push_back(s);
        }
        write_keypoints_csv(dir / "keypoints.csv", skeletons);
      }
    }
  }
  return extract_dataset(out, extract_cfg);
}

}  // namespace modgen
