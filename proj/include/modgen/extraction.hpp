#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "modgen/dataset.hpp"
#include "modgen/image_io.hpp"
#include "modgen/optical_flow.hpp"
#include "modgen/pose_modalities.hpp"

namespace modgen {

struct ExtractConfig {
  double heatmap_sigma = 6.0;
  int limb_width = 2;
  double flow_max_magnitude = 10.0;
  FlowConfig flow;
  SkeletonEdges edges = coco17_edges();

  void validate() const {
    require(heatmap_sigma > 0.0, "heatmap_sigma must be positive");
    require(limb_width >= 1, "limb_width must be >= 1");
    require(flow_max_magnitude > 0.0, "flow_max_magnitude must be positive");
    flow.validate();
    edges.validate();
  }
};

// Derives the heatmap, limb and flow streams of one video from its RGB frames
// and keypoints.csv. Flow of frame t is estimated from (t, t+1); the last
// frame repeats the previous field so every stream has the same length.
inline void extract_video(const DatasetItem& item, int height, int width, const ExtractConfig& cfg) {
  namespace fs = std::filesystem;
  cfg.validate();
  const auto kp_path = item.dir / "keypoints.csv";
  const auto skeletons = read_keypoints_csv(kp_path, height, width);
  if (static_cast<Index>(skeletons.size()) != item.frame_count)
    throw DataError(kp_path.string() + " has " + std::to_string(skeletons.size()) +
                    " rows but the video has " + std::to_string(item.frame_count) + " frames");
  for (int m = 1; m < kNumModalities; ++m) fs::create_directories(item.stream_dir(static_cast<Modality>(m)));

  std::vector<Plane> gray;
  gray.reserve(static_cast<std::size_t>(item.frame_count));
  for (Index f = 0; f < item.frame_count; ++f) {
    const Frame8 rgb = read_png(item.frame_path(Modality::kRgb, f));
    if (rgb.height != height || rgb.width != width)
      throw DataError(item.frame_path(Modality::kRgb, f).string() + " has unexpected size");
    gray.push_back(to_grayscale(to_float_image(rgb)));
    const auto& s = skeletons[static_cast<std::size_t>(f)];
    write_png(item.frame_path(Modality::kHeatmaps, f),
              to_modality_image(render_heatmaps(s, cfg.heatmap_sigma), Modality::kHeatmaps, height, width).pixels);
    write_png(item.frame_path(Modality::kLimbs, f),
              to_modality_image(render_limbs(s, cfg.edges, cfg.limb_width), Modality::kLimbs, height, width).pixels);
  }
  ModalityImage last;
  for (Index f = 0; f < item.frame_count; ++f) {
    if (f + 1 < item.frame_count) {
      const FlowField flow = estimate_flow(gray[static_cast<std::size_t>(f)], gray[static_cast<std::size_t>(f + 1)], cfg.flow);
      last = to_modality_image(flow, height, width, cfg.flow_max_magnitude);
    } else if (item.frame_count == 1) {
      last = flow_to_image(FlowField(Shape{height, width, 2}), cfg.flow_max_magnitude);
    }
    write_png(item.frame_path(Modality::kFlow, f), last.pixels);
  }
}

// Runs extraction over every video found under root (RGB + keypoints only
// need to exist) and returns the validated full index.
inline DatasetIndex extract_dataset(const std::filesystem::path& root, const ExtractConfig& cfg) {
  DatasetIndex raw = scan_dataset(root, /*require_derived_streams=*/false);
  for (const auto& item : raw.items) extract_video(item, raw.frame_height, raw.frame_width, cfg);
  return scan_dataset(root);
}

}  // namespace modgen
