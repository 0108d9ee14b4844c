#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "modgen/errors.hpp"

namespace modgen::plots {

struct Series {
  std::string name;
  std::vector<double> y;
};

inline const cv::Scalar kPalette[] = {{180, 119, 31}, {14, 127, 255}, {44, 160, 44}, {40, 39, 214},
                                      {189, 103, 148}, {75, 86, 140}, {194, 119, 227}};

inline void save(const cv::Mat& img, const std::filesystem::path& path) {
  std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), img)) throw DataError("cannot write " + path.string());
}

// One panel per series, each scaled to its own range.
inline void line_panels(const std::vector<Series>& series, const std::string& title,
                        const std::filesystem::path& path) {
  const int pw = 560, ph = 170, cols = 2;
  const int rows = static_cast<int>((series.size() + cols - 1) / cols);
  cv::Mat img(40 + rows * ph, cols * pw, CV_8UC3, cv::Scalar(255, 255, 255));
  cv::putText(img, title, {10, 26}, cv::FONT_HERSHEY_SIMPLEX, 0.7, {0, 0, 0}, 1, cv::LINE_AA);
  for (std::size_t i = 0; i < series.size(); ++i) {
    const auto& s = series[i];
    const int x0 = static_cast<int>(i % cols) * pw + 60, y0 = 40 + static_cast<int>(i / cols) * ph + 20;
    const int w = pw - 80, h = ph - 50;
    cv::rectangle(img, {x0, y0}, {x0 + w, y0 + h}, {200, 200, 200});
    std::vector<double> finite;
    for (double v : s.y)
      if (std::isfinite(v)) finite.push_back(v);
    if (finite.empty()) continue;
    double lo = *std::min_element(finite.begin(), finite.end());
    double hi = *std::max_element(finite.begin(), finite.end());
    if (hi - lo < 1e-12) hi = lo + 1.0;
    std::vector<cv::Point> pts;
    for (std::size_t k = 0; k < s.y.size(); ++k) {
      if (!std::isfinite(s.y[k])) continue;
      const double fx = s.y.size() > 1 ? static_cast<double>(k) / static_cast<double>(s.y.size() - 1) : 0.5;
      pts.emplace_back(x0 + static_cast<int>(fx * w), y0 + h - static_cast<int>((s.y[k] - lo) / (hi - lo) * h));
    }
    cv::polylines(img, pts, false, kPalette[i % 7], 1, cv::LINE_AA);
    auto label = [&](double v) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.3g", v);
      return std::string(buf);
    };
    cv::putText(img, s.name, {x0 + 4, y0 - 4}, cv::FONT_HERSHEY_SIMPLEX, 0.45, {0, 0, 0}, 1, cv::LINE_AA);
    cv::putText(img, label(hi), {x0 - 56, y0 + 10}, cv::FONT_HERSHEY_SIMPLEX, 0.35, {80, 80, 80}, 1, cv::LINE_AA);
    cv::putText(img, label(lo), {x0 - 56, y0 + h}, cv::FONT_HERSHEY_SIMPLEX, 0.35, {80, 80, 80}, 1, cv::LINE_AA);
  }
  save(img, path);
}

// Grouped bars in [0, 1]: one group per label, one bar per series.
inline void grouped_bars(const std::vector<std::string>& labels, const std::vector<Series>& series,
                         const std::string& title, const std::filesystem::path& path) {
  const int group_w = 60, h = 300, x0 = 50, y0 = 50;
  const int w = static_cast<int>(labels.size()) * group_w;
  cv::Mat img(y0 + h + 130, x0 + w + 20, CV_8UC3, cv::Scalar(255, 255, 255));
  cv::putText(img, title, {10, 26}, cv::FONT_HERSHEY_SIMPLEX, 0.6, {0, 0, 0}, 1, cv::LINE_AA);
  for (int t = 0; t <= 4; ++t) {
    const int y = y0 + h - t * h / 4;
    cv::line(img, {x0, y}, {x0 + w, y}, {220, 220, 220});
    cv::putText(img, std::to_string(t * 25) + "%", {4, y + 4}, cv::FONT_HERSHEY_SIMPLEX, 0.35, {80, 80, 80}, 1,
                cv::LINE_AA);
  }
  const int bar_w = (group_w - 12) / std::max<int>(1, static_cast<int>(series.size()));
  for (std::size_t g = 0; g < labels.size(); ++g) {
    for (std::size_t s = 0; s < series.size(); ++s) {
      const double v = g < series[s].y.size() ? series[s].y[g] : std::nan("");
      if (!std::isfinite(v)) continue;
      const int bx = x0 + static_cast<int>(g) * group_w + 6 + static_cast<int>(s) * bar_w;
      const int bh = static_cast<int>(std::clamp(v, 0.0, 1.0) * h);
      cv::rectangle(img, {bx, y0 + h - bh}, {bx + bar_w - 2, y0 + h}, kPalette[s % 7], cv::FILLED);
    }
    cv::Mat text(20, 120, CV_8UC3, cv::Scalar(255, 255, 255));
    cv::putText(text, labels[g], {2, 14}, cv::FONT_HERSHEY_SIMPLEX, 0.35, {0, 0, 0}, 1, cv::LINE_AA);
    cv::Mat rotated;
    cv::rotate(text, rotated, cv::ROTATE_90_CLOCKWISE);
    const int lx = x0 + static_cast<int>(g) * group_w + group_w / 2 - 10;
    rotated.copyTo(img(cv::Rect(lx, y0 + h + 6, rotated.cols, rotated.rows)));
  }
  for (std::size_t s = 0; s < series.size(); ++s) {
    const int lx = x0 + 200 + static_cast<int>(s) * 150;
    cv::rectangle(img, {lx, 14}, {lx + 12, 26}, kPalette[s % 7], cv::FILLED);
    cv::putText(img, series[s].name, {lx + 16, 25}, cv::FONT_HERSHEY_SIMPLEX, 0.45, {0, 0, 0}, 1, cv::LINE_AA);
  }
  save(img, path);
}

}  // namespace modgen::plots
