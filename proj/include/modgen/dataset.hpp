#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "modgen/errors.hpp"
#include "modgen/image_io.hpp"
#include "modgen/pose_modalities.hpp"
#include "modgen/tensor.hpp"

namespace modgen {

enum class Domain : int { kSynthetic = 0, kReal = 1 };

inline const char* domain_name(Domain d) { return d == Domain::kSynthetic ? "synthetic" : "real"; }

inline Domain parse_domain(const std::string& s) {
  if (s == "synthetic") return Domain::kSynthetic;
  if (s == "real") return Domain::kReal;
  throw ConfigError("unknown domain '" + s + "' (expected synthetic or real)");
}

// Ordered subset of modality ids, always ascending.
using Combo = std::vector<Modality>;

inline Combo make_combo(std::vector<int> ids) {
  std::sort(ids.begin(), ids.end());
  require(!ids.empty(), "modality combination must be non-empty");
  require(std::adjacent_find(ids.begin(), ids.end()) == ids.end(),
          "modality combination has duplicates");
  Combo c;
  for (int id : ids) {
    require(id >= 0 && id < kNumModalities, "modality id out of range: " + std::to_string(id));
    c.push_back(static_cast<Modality>(id));
  }
  return c;
}

inline Combo all_modalities() { return make_combo({0, 1, 2, 3}); }

// "rgb+flow" style name.
inline std::string combo_name(const Combo& c) {
  std::string s;
  for (Modality m : c) s += (s.empty() ? "" : "+") + std::string(modality_name(m));
  return s;
}

// Accepts names ("rgb+limbs") or ids ("0+2", "0,2").
inline Combo parse_combo(const std::string& text) {
  std::vector<int> ids;
  std::string token;
  std::string norm = text;
  std::replace(norm.begin(), norm.end(), ',', '+');
  std::istringstream in(norm);
  while (std::getline(in, token, '+')) {
    if (token.empty()) continue;
    int id = -1;
    for (int m = 0; m < kNumModalities; ++m)
      if (token == kModalityNames[m] || token == std::to_string(m)) id = m;
    if (id < 0) throw ConfigError("unknown modality '" + token + "' in combo '" + text + "'");
    ids.push_back(id);
  }
  if (ids.empty()) throw ConfigError("empty modality combo '" + text + "'");
  try {
    return make_combo(ids);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string(e.what()) + " in '" + text + "'");
  }
}

// The 15 non-empty subsets of the four modalities, by size then
// lexicographically by modality ids.
inline std::vector<Combo> canonical_combos() {
  std::vector<std::vector<int>> subsets;
  for (int mask = 1; mask < (1 << kNumModalities); ++mask) {
    std::vector<int> ids;
    for (int m = 0; m < kNumModalities; ++m)
      if (mask & (1 << m)) ids.push_back(m);
    subsets.push_back(ids);
  }
  std::sort(subsets.begin(), subsets.end(), [](const auto& a, const auto& b) {
    return a.size() != b.size() ? a.size() < b.size() : a < b;
  });
  std::vector<Combo> out;
  for (const auto& s : subsets) out.push_back(make_combo(s));
  return out;
}

struct DatasetItem {
  std::string video_id;
  std::string action_name;
  int label = 0;
  Domain domain = Domain::kSynthetic;
  Index frame_count = 0;
  std::filesystem::path dir;

  std::filesystem::path stream_dir(Modality m) const { return dir / modality_name(m); }
  std::filesystem::path frame_path(Modality m, Index f) const {
    return stream_dir(m) / frame_filename(f);
  }
};

struct DatasetIndex {
  std::filesystem::path root;
  std::vector<std::string> action_names;  // index = label
  std::vector<DatasetItem> items;         // sorted by video_id
  int frame_height = 0;
  int frame_width = 0;

  int num_actions() const { return static_cast<int>(action_names.size()); }

  DatasetIndex filter(Domain d) const {
    DatasetIndex out = *this;
    out.items.clear();
    for (const auto& it : items)
      if (it.domain == d) out.items.push_back(it);
    return out;
  }

  // Deterministic split: every `every`-th video of each (domain, action), by
  // index order, is held out.
  DatasetIndex split(bool holdout, int every = 3) const {
    require(every >= 2, "holdout interval must be >= 2");
    DatasetIndex out = *this;
    out.items.clear();
    std::map<std::pair<int, int>, int> seen;
    for (const auto& it : items) {
      const int k = seen[{static_cast<int>(it.domain), it.label}]++;
      if ((k % every == every - 1) == holdout) out.items.push_back(it);
    }
    return out;
  }
};

inline std::vector<std::string> read_labels_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "name,id") throw DataError(path.string() + ": expected header 'name,id'");
  std::vector<std::pair<int, std::string>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw DataError(path.string() + ": malformed row '" + line + "'");
    int id = -1;
    try {
      id = std::stoi(line.substr(comma + 1));
    } catch (const std::exception&) {
      throw DataError(path.string() + ": bad label id in '" + line + "'");
    }
    rows.emplace_back(id, line.substr(0, comma));
  }
  std::sort(rows.begin(), rows.end());
  std::vector<std::string> names;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].first != static_cast<int>(i))
      throw DataError(path.string() + ": label ids must be 0..N-1 without gaps");
    names.push_back(rows[i].second);
  }
  return names;
}

inline void write_labels_csv(const std::filesystem::path& path, const std::vector<std::string>& names) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "name,id\n";
  for (std::size_t i = 0; i < names.size(); ++i) out << names[i] << ',' << i << '\n';
}

namespace detail {

// Number of frames in a stream directory, requiring 000000.png .. contiguous.
inline Index count_frames(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw DataError("missing modality stream " + dir.string());
  Index n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".png") ++n;
  for (Index f = 0; f < n; ++f)
    if (!fs::exists(dir / frame_filename(f)))
      throw DataError("stream " + dir.string() + " is missing frame " + frame_filename(f));
  return n;
}

}  // namespace detail

// Layout: root/labels.csv and root/<domain>/<action>/<video_id>/<stream>/%06d.png
inline DatasetIndex scan_dataset(const std::filesystem::path& root,
                                 bool require_derived_streams = true) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw DataError("dataset root " + root.string() + " is not a directory");
  DatasetIndex index;
  index.root = root;
  std::vector<fs::path> domain_dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) domain_dirs.push_back(e.path());
  std::sort(domain_dirs.begin(), domain_dirs.end());
  if (domain_dirs.empty()) return index;
  index.action_names = read_labels_csv(root / "labels.csv");
  std::map<std::string, int> label_of;
  for (std::size_t i = 0; i < index.action_names.size(); ++i) label_of[index.action_names[i]] = static_cast<int>(i);

  for (const auto& ddir : domain_dirs) {
    Domain domain;
    try {
      domain = parse_domain(ddir.filename().string());
    } catch (const ConfigError&) {
      throw DataError("unknown domain directory " + ddir.string());
    }
    for (const auto& adir : fs::directory_iterator(ddir)) {
      if (!adir.is_directory()) continue;
      const std::string action = adir.path().filename().string();
      auto it = label_of.find(action);
      if (it == label_of.end())
        throw DataError("unknown action directory " + adir.path().string() + " (not in labels.csv)");
      for (const auto& vdir : fs::directory_iterator(adir.path())) {
        if (!vdir.is_directory()) continue;
        DatasetItem item;
        item.video_id = vdir.path().filename().string();
        item.action_name = action;
        item.label = it->second;
        item.domain = domain;
        item.dir = vdir.path();
        item.frame_count = detail::count_frames(item.stream_dir(Modality::kRgb));
        if (require_derived_streams) {
          for (int m = 1; m < kNumModalities; ++m) {
            const auto dir = item.stream_dir(static_cast<Modality>(m));
            if (!fs::is_directory(dir))
              throw DataError("video " + item.video_id + " is missing its " +
                              modality_name(static_cast<Modality>(m)) + " stream (" + dir.string() + ")");
            const Index n = detail::count_frames(dir);
            if (n != item.frame_count)
              throw DataError("video " + item.video_id + ": " + modality_name(static_cast<Modality>(m)) +
                              " has " + std::to_string(n) + " frames, rgb has " +
                              std::to_string(item.frame_count));
          }
        }
        index.items.push_back(std::move(item));
      }
    }
  }
  std::sort(index.items.begin(), index.items.end(),
            [](const DatasetItem& a, const DatasetItem& b) { return a.video_id < b.video_id; });
  for (std::size_t i = 1; i < index.items.size(); ++i)
    if (index.items[i].video_id == index.items[i - 1].video_id)
      throw DataError("duplicate video id " + index.items[i].video_id);
  for (const auto& item : index.items) {
    if (item.frame_count == 0) continue;
    const Frame8 f = read_png(item.frame_path(Modality::kRgb, 0));
    if (index.frame_height == 0) {
      index.frame_height = f.height;
      index.frame_width = f.width;
    } else if (f.height != index.frame_height || f.width != index.frame_width) {
      throw DataError("video " + item.video_id + " has frame size " + std::to_string(f.height) + "x" +
                      std::to_string(f.width) + ", expected " + std::to_string(index.frame_height) +
                      "x" + std::to_string(index.frame_width));
    }
  }
  return index;
}

// --- chunking and sampling --------------------------------------------------

struct Chunk {
  std::size_t item = 0;  // index into DatasetIndex::items
  Index start_frame = 0;
  Index length = 90;
};

inline Index chunk_count(Index frame_count, Index chunk_len) { return frame_count / chunk_len; }

// Tiles every video into non-overlapping chunks; remainders are dropped and
// videos shorter than one chunk are skipped with a warning.
inline std::vector<Chunk> make_chunks(const DatasetIndex& index, Index chunk_len,
                                      std::vector<std::string>* warnings = nullptr) {
  require(chunk_len >= 1, "chunk_len must be >= 1");
  std::vector<Chunk> out;
  for (std::size_t i = 0; i < index.items.size(); ++i) {
    const Index n = chunk_count(index.items[i].frame_count, chunk_len);
    if (n == 0 && warnings)
      warnings->push_back("video " + index.items[i].video_id + " has " +
                          std::to_string(index.items[i].frame_count) + " frames (< " +
                          std::to_string(chunk_len) + "), excluded");
    for (Index c = 0; c < n; ++c) out.push_back({i, c * chunk_len, chunk_len});
  }
  return out;
}

struct WindowRef {
  std::size_t item = 0;
  Index start = 0;
};

// Draws a chunk uniformly, then a start offset uniformly in [0, chunk_len - S].
class WindowSampler {
 public:
  WindowSampler(std::vector<Chunk> chunks, Index window, std::uint64_t seed)
      : chunks_(std::move(chunks)), window_(window), rng_(seed) {
    require(window >= 1, "window length must be >= 1");
    for (const auto& c : chunks_) require(c.length >= window, "chunk shorter than window");
  }

  bool empty() const { return chunks_.empty(); }
  std::size_t num_chunks() const { return chunks_.size(); }

  WindowRef next() {
    require(!chunks_.empty(), "WindowSampler has no chunks to draw from");
    std::uniform_int_distribution<std::size_t> pick(0, chunks_.size() - 1);
    const Chunk& c = chunks_[pick(rng_)];
    std::uniform_int_distribution<Index> offset(0, c.length - window_);
    return {c.item, c.start_frame + offset(rng_)};
  }

  std::string rng_state() const {
    std::ostringstream s;
    s << rng_;
    return s.str();
  }
  void set_rng_state(const std::string& state) {
    std::istringstream s(state);
    s >> rng_;
    if (!s) throw DataError("corrupt sampler rng state");
  }

 private:
  std::vector<Chunk> chunks_;
  Index window_;
  std::mt19937_64 rng_;
};

inline Index center_window_start(const Chunk& c, Index window) {
  return c.start_frame + (c.length - window) / 2;
}

// --- frame access -------------------------------------------------------------

// S x H x W x (3 m) clip; channel block j holds combo[j].
struct ModalityStack {
  Tensor<float> frames;
  Combo combo;
  int label = 0;

  Tensor<float> block(std::size_t j) const {
    const Index s = frames.dim(0), h = frames.dim(1), w = frames.dim(2), c = frames.dim(3);
    Tensor<float> out(Shape{s, h, w, 3});
    for (Index p = 0; p < s * h * w; ++p)
      for (Index k = 0; k < 3; ++k) out[p * 3 + k] = frames[p * c + static_cast<Index>(j) * 3 + k];
    return out;
  }
};

// Loads and caches decoded 8-bit streams. Safe for concurrent readers.
class FrameStore {
 public:
  explicit FrameStore(DatasetIndex index) : index_(std::move(index)) {}

  const DatasetIndex& index() const { return index_; }

  // Every frame of one stream, decoded once and shared.
  std::shared_ptr<const std::vector<Frame8>> stream(std::size_t item, Modality m) const {
    const auto key = std::make_pair(item, static_cast<int>(m));
    {
      std::lock_guard<std::mutex> lock(mutex_);
      auto it = cache_.find(key);
      if (it != cache_.end()) return it->second;
    }
    const DatasetItem& d = index_.items.at(item);
    auto frames = std::make_shared<std::vector<Frame8>>();
    frames->reserve(static_cast<std::size_t>(d.frame_count));
    for (Index f = 0; f < d.frame_count; ++f) frames->push_back(read_png(d.frame_path(m, f)));
    std::lock_guard<std::mutex> lock(mutex_);
    return cache_.emplace(key, std::move(frames)).first->second;
  }

  ModalityStack load_window(std::size_t item, Index start, Index length, const Combo& combo) const {
    const DatasetItem& d = index_.items.at(item);
    require(start >= 0 && start + length <= d.frame_count,
            "window [" + std::to_string(start) + ", " + std::to_string(start + length) +
                ") outside video " + d.video_id);
    const Index h = index_.frame_height, w = index_.frame_width;
    const Index ch = 3 * static_cast<Index>(combo.size());
    ModalityStack st{Tensor<float>(Shape{length, h, w, ch}), combo, d.label};
    for (std::size_t j = 0; j < combo.size(); ++j) {
      auto frames = stream(item, combo[j]);
      for (Index t = 0; t < length; ++t) {
        const auto& src = (*frames)[static_cast<std::size_t>(start + t)].rgb;
        float* dst = st.frames.data() + t * h * w * ch + static_cast<Index>(j) * 3;
        for (Index p = 0; p < h * w; ++p)
          for (Index k = 0; k < 3; ++k) dst[p * ch + k] = src[static_cast<std::size_t>(p * 3 + k)] / 255.0f;
      }
    }
    return st;
  }

 private:
  DatasetIndex index_;
  mutable std::mutex mutex_;
  mutable std::map<std::pair<std::size_t, int>, std::shared_ptr<const std::vector<Frame8>>> cache_;
};

// Stacks a batch into the classifier layout [B, S, 3m, H, W].
inline Tensor<float> to_clip_tensor(const std::vector<ModalityStack>& batch) {
  require(!batch.empty(), "to_clip_tensor: empty batch");
  const Index s = batch[0].frames.dim(0), h = batch[0].frames.dim(1), w = batch[0].frames.dim(2),
              c = batch[0].frames.dim(3);
  const Index b = static_cast<Index>(batch.size());
  Tensor<float> out(Shape{b, s, c, h, w});
  for (Index i = 0; i < b; ++i) {
    require(batch[static_cast<std::size_t>(i)].frames.shape() == batch[0].frames.shape(),
            "to_clip_tensor: ragged batch");
    const float* src = batch[static_cast<std::size_t>(i)].frames.data();
    for (Index t = 0; t < s; ++t)
      for (Index p = 0; p < h * w; ++p)
        for (Index k = 0; k < c; ++k)
          out[(((i * s + t) * c + k) * h * w) + p] = src[(t * h * w + p) * c + k];
  }
  return out;
}

// Frames of channel block j from a [B, S, 3m, H, W] clip tensor as [B*S, 3, H, W].
template <typename T>
Tensor<T> modality_frames(const Tensor<T>& clips, std::size_t j) {
  require(clips.rank() == 5, "modality_frames expects [B, S, 3m, H, W], got " + shape_string(clips.shape()));
  const Index b = clips.dim(0), s = clips.dim(1), c = clips.dim(2), hw = clips.dim(3) * clips.dim(4);
  require(static_cast<Index>(3 * j + 3) <= c, "modality_frames: block out of range");
  Tensor<T> out(Shape{b * s, 3, clips.dim(3), clips.dim(4)});
  for (Index n = 0; n < b * s; ++n)
    std::copy_n(clips.data() + (n * c + static_cast<Index>(3 * j)) * hw, 3 * hw, out.data() + n * 3 * hw);
  return out;
}

}  // namespace modgen
