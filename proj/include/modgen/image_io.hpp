#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "modgen/errors.hpp"
#include "modgen/tensor.hpp"

namespace modgen {

// 8-bit RGB frame, row-major H x W x 3.
struct Frame8 {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> rgb;
};

inline std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline Frame8 to_frame8(const Tensor<float>& img) {
  require(img.rank() == 3 && img.dim(2) == 3, "expected HxWx3 image, got " + shape_string(img.shape()));
  Frame8 f{static_cast<int>(img.dim(0)), static_cast<int>(img.dim(1)), {}};
  f.rgb.resize(static_cast<std::size_t>(img.numel()));
  for (Index i = 0; i < img.numel(); ++i) f.rgb[static_cast<std::size_t>(i)] = quantize(img[i]);
  return f;
}

inline Tensor<float> to_float_image(const Frame8& f) {
  Tensor<float> img(Shape{f.height, f.width, 3});
  for (std::size_t i = 0; i < f.rgb.size(); ++i) img[static_cast<Index>(i)] = f.rgb[i] / 255.0f;
  return img;
}

inline void write_png(const std::filesystem::path& path, const Frame8& f) {
  cv::Mat bgr(f.height, f.width, CV_8UC3);
  for (int y = 0; y < f.height; ++y)
    for (int x = 0; x < f.width; ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) * f.width + x) * 3;
      bgr.at<cv::Vec3b>(y, x) = cv::Vec3b(f.rgb[i + 2], f.rgb[i + 1], f.rgb[i]);
    }
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr);
  } catch (const cv::Exception& e) {
    throw DataError("failed to write " + path.string() + ": " + e.what());
  }
  if (!ok) throw DataError("failed to write " + path.string());
}

inline void write_png(const std::filesystem::path& path, const Tensor<float>& img) {
  write_png(path, to_frame8(img));
}

inline Frame8 read_png(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DataError("cannot read image " + path.string());
  Frame8 f{bgr.rows, bgr.cols, {}};
  f.rgb.resize(static_cast<std::size_t>(bgr.rows) * bgr.cols * 3);
  for (int y = 0; y < bgr.rows; ++y)
    for (int x = 0; x < bgr.cols; ++x) {
      const auto& p = bgr.at<cv::Vec3b>(y, x);
      const std::size_t i = (static_cast<std::size_t>(y) * f.width + x) * 3;
      f.rgb[i] = p[2];
      f.rgb[i + 1] = p[1];
      f.rgb[i + 2] = p[0];
    }
  return f;
}

inline std::string frame_filename(Index frame) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06lld.png", static_cast<long long>(frame));
  return buf;
}

}  // namespace modgen
