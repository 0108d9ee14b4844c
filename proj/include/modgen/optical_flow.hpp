#pragma once

#include <cmath>
#include <numbers>

#include <opencv2/core.hpp>
#include <opencv2/video/tracking.hpp>

#include "modgen/errors.hpp"
#include "modgen/pose_modalities.hpp"
#include "modgen/tensor.hpp"

namespace modgen {

// H x W x 2 displacement field (u horizontal, v vertical), px/frame.
using FlowField = Tensor<float>;

struct FlowConfig {
  int pyramid_levels = 3;
  double pyramid_scale = 0.5;
  int window_size = 15;
  int iterations = 3;
  int poly_n = 5;
  double poly_sigma = 1.1;

  void validate() const {
    require(pyramid_levels > 0 && window_size > 0 && iterations > 0 && poly_n > 0 &&
                poly_sigma > 0.0,
            "flow config fields must be positive");
    require(pyramid_scale > 0.0 && pyramid_scale < 1.0, "flow pyramid_scale must be in (0,1)");
  }
};

// Luminance of an H x W x 3 image.
inline Plane to_grayscale(const Tensor<float>& rgb) {
  require(rgb.rank() == 3 && rgb.dim(2) == 3, "to_grayscale: expected HxWx3, got " +
                                                  shape_string(rgb.shape()));
  Plane out(Shape{rgb.dim(0), rgb.dim(1)});
  for (Index i = 0; i < out.numel(); ++i)
    out[i] = 0.299f * rgb[3 * i] + 0.587f * rgb[3 * i + 1] + 0.114f * rgb[3 * i + 2];
  return out;
}

inline FlowField estimate_flow(const Plane& prev, const Plane& next, const FlowConfig& cfg = {}) {
  cfg.validate();
  require(prev.rank() == 2 && prev.shape() == next.shape(),
          "estimate_flow: frame shapes differ (" + shape_string(prev.shape()) + " vs " +
              shape_string(next.shape()) + ")");
  const int h = static_cast<int>(prev.dim(0)), w = static_cast<int>(prev.dim(1));
  cv::Mat a(h, w, CV_32F), b(h, w, CV_32F);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      a.at<float>(y, x) = 255.0f * prev[static_cast<Index>(y) * w + x];
      b.at<float>(y, x) = 255.0f * next[static_cast<Index>(y) * w + x];
    }
  // OpenCV's update step drops the residual on the last row and column; a
  // reflected margin wider than the averaging window keeps that off the frame.
  const int pad = cfg.window_size + 1;
  cv::copyMakeBorder(a, a, pad, pad, pad, pad, cv::BORDER_REFLECT_101);
  cv::copyMakeBorder(b, b, pad, pad, pad, pad, cv::BORDER_REFLECT_101);
  cv::Mat padded;
  cv::calcOpticalFlowFarneback(a, b, padded, cfg.pyramid_scale, cfg.pyramid_levels,
                               cfg.window_size, cfg.iterations, cfg.poly_n, cfg.poly_sigma, 0);
  const cv::Mat flow = padded(cv::Rect(pad, pad, w, h));
  FlowField out(Shape{h, w, 2});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const auto& f = flow.at<cv::Vec2f>(y, x);
      out[(static_cast<Index>(y) * w + x) * 2] = f[0];
      out[(static_cast<Index>(y) * w + x) * 2 + 1] = f[1];
    }
  return out;
}

// Hue angle in degrees, [0, 360).
inline double flow_hue(double u, double v) {
  double deg = std::atan2(v, u) * 180.0 / std::numbers::pi;
  if (deg < 0.0) deg += 360.0;
  return deg >= 360.0 ? 0.0 : deg;
}

// Fully saturated HSV -> RGB.
inline void hsv_to_rgb(double hue, double value, float* rgb) {
  const double hp = hue / 60.0;
  const double x = 1.0 - std::abs(std::fmod(hp, 2.0) - 1.0);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(hp) % 6) {
    case 0: r = 1, g = x; break;
    case 1: r = x, g = 1; break;
    case 2: g = 1, b = x; break;
    case 3: g = x, b = 1; break;
    case 4: r = x, b = 1; break;
    default: r = 1, b = x; break;
  }
  rgb[0] = static_cast<float>(r * value);
  rgb[1] = static_cast<float>(g * value);
  rgb[2] = static_cast<float>(b * value);
}

// Direction -> hue, saturation 1, value = min(|f|, max_magnitude) / max_magnitude.
// Zero flow is black.
inline ModalityImage flow_to_image(const FlowField& flow, double max_magnitude) {
  require(max_magnitude > 0.0, "flow_to_image: max_magnitude must be positive");
  require(flow.rank() == 3 && flow.dim(2) == 2, "flow_to_image: expected HxWx2, got " +
                                                    shape_string(flow.shape()));
  ModalityImage img{Tensor<float>(Shape{flow.dim(0), flow.dim(1), 3}), Modality::kFlow};
  for (Index i = 0; i < flow.dim(0) * flow.dim(1); ++i) {
    const double u = flow[2 * i], v = flow[2 * i + 1];
    const double mag = std::hypot(u, v);
    if (!(mag > 0.0)) continue;
    hsv_to_rgb(flow_hue(u, v), std::min(mag, max_magnitude) / max_magnitude,
               &img.pixels[3 * i]);
  }
  return img;
}

inline ModalityImage to_modality_image(const FlowField& flow, int height, int width,
                                       double max_magnitude) {
  require(flow.rank() == 3 && flow.dim(0) == height && flow.dim(1) == width && flow.dim(2) == 2,
          "to_modality_image: expected " + std::to_string(height) + "x" + std::to_string(width) +
              "x2 flow, got " + shape_string(flow.shape()));
  return flow_to_image(flow, max_magnitude);
}

}  // namespace modgen
