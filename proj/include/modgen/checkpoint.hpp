#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "modgen/dataset.hpp"
#include "modgen/errors.hpp"
#include "modgen/models.hpp"
#include "modgen/nn.hpp"

namespace modgen {

// Checkpoint directory: manifest.json (format, model kind, architecture,
// parameter table) plus params.bin (little-endian float32 blobs in table order).
inline constexpr int kCheckpointFormat = 1;

using Json = nlohmann::json;

inline Json net_to_json(const NetConfig& n) {
  return {{"dc_widths", n.dc_widths},         {"dg_channels", n.dg_channels},
          {"dg_res_blocks", n.dg_res_blocks}, {"ac_widths", n.ac_widths},
          {"embedding_dim", n.embedding_dim}, {"num_actions", n.num_actions},
          {"input_channels", n.input_channels}, {"frame_size", n.frame_size},
          {"sequence_length", n.sequence_length}};
}

inline NetConfig net_from_json(const Json& j) {
  NetConfig n;
  j.at("dc_widths").get_to(n.dc_widths);
  j.at("dg_channels").get_to(n.dg_channels);
  j.at("dg_res_blocks").get_to(n.dg_res_blocks);
  j.at("ac_widths").get_to(n.ac_widths);
  j.at("embedding_dim").get_to(n.embedding_dim);
  j.at("num_actions").get_to(n.num_actions);
  j.at("input_channels").get_to(n.input_channels);
  j.at("frame_size").get_to(n.frame_size);
  j.at("sequence_length").get_to(n.sequence_length);
  return n;
}

inline std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t h = 1469598103934665603ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < bytes; ++i) h = (h ^ p[i]) * 1099511628211ull;
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

struct CheckpointInfo {
  ModelKind kind = ModelKind::kAC;
  NetConfig net;
  std::optional<Combo> combo;  // action classifiers only
  bool desk_scale = true;
  Json extra = Json::object();  // free-form run facts (epoch, accuracy, ...)
};

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::exception& e) {
    throw DataError("corrupt JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

inline void write_json(const std::filesystem::path& path, const Json& j) { write_text_file(path, j.dump(2) + "\n"); }

template <typename Model>
void save_checkpoint(const std::filesystem::path& dir, const Model& model, const CheckpointInfo& info) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  std::vector<float> blob;
  Json table = Json::array();
  for (const auto& p : model.params().params()) {
    const auto& v = p.var.value();
    table.push_back({{"name", p.name}, {"shape", v.shape()}, {"offset", blob.size()}, {"decay", p.decay}});
    for (Index i = 0; i < v.numel(); ++i) blob.push_back(static_cast<float>(v[i]));
  }
  static_assert(sizeof(float) == 4);
  std::vector<unsigned char> bytes(blob.size() * 4);
  for (std::size_t i = 0; i < blob.size(); ++i) {
    std::uint32_t u;
    std::memcpy(&u, &blob[i], 4);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<unsigned char>(u >> (8 * b));
  }
  {
    std::ofstream out(dir / "params.bin", std::ios::binary);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("cannot write " + (dir / "params.bin").string());
  }
  Json m = {{"format_version", kCheckpointFormat},
            {"kind", model_kind_name(info.kind)},
            {"net", net_to_json(info.net)},
            {"desk_scale", info.desk_scale},
            {"parameter_count", blob.size()},
            {"params_fnv1a", hex64(fnv1a(bytes.data(), bytes.size()))},
            {"parameters", table},
            {"extra", info.extra}};
  if (info.combo) m["combo"] = combo_name(*info.combo);
  write_json(dir / "manifest.json", m);
}

inline CheckpointInfo read_checkpoint_info(const std::filesystem::path& dir) {
  const Json m = read_json(dir / "manifest.json");
  const std::string where = (dir / "manifest.json").string();
  try {
    const int version = m.at("format_version").get<int>();
    if (version != kCheckpointFormat)
      throw DataError(where + ": unsupported checkpoint format_version " + std::to_string(version) +
                      " (expected " + std::to_string(kCheckpointFormat) + ")");
    CheckpointInfo info;
    const std::string kind = m.at("kind").get<std::string>();
    bool known = false;
    for (ModelKind k : {ModelKind::kDC, ModelKind::kDG, ModelKind::kAC})
      if (kind == model_kind_name(k)) {
        info.kind = k;
        known = true;
      }
    if (!known) throw DataError(where + ": unknown model kind '" + kind + "'");
    info.net = net_from_json(m.at("net"));
    info.desk_scale = m.at("desk_scale").get<bool>();
    if (m.contains("combo")) info.combo = parse_combo(m.at("combo").get<std::string>());
    if (m.contains("extra")) info.extra = m.at("extra");
    return info;
  } catch (const Json::exception& e) {
    throw DataError(where + ": malformed manifest: " + e.what());
  }
}

// Rebuilds the model from its manifest and restores every parameter blob.
// expect_desk_scale, when given, must match the preset the checkpoint was
// trained under.
template <typename Model>
Model load_checkpoint(const std::filesystem::path& dir, CheckpointInfo* info_out = nullptr,
                      std::optional<bool> expect_desk_scale = std::nullopt) {
  const CheckpointInfo info = read_checkpoint_info(dir);
  if (info.kind != Model::kind)
    throw ConfigError(dir.string() + " holds a " + model_kind_name(info.kind) + " checkpoint, expected " +
                      model_kind_name(Model::kind));
  if (expect_desk_scale && *expect_desk_scale != info.desk_scale)
    throw ConfigError(dir.string() + " was trained with desk_scale=" + (info.desk_scale ? "true" : "false") +
                      " but the run uses desk_scale=" + (*expect_desk_scale ? "true" : "false"));
  Model model;
  try {
    model = Model(info.net, 0);
  } catch (const std::invalid_argument& e) {
    throw DataError(dir.string() + ": invalid architecture: " + e.what());
  }
  const Json m = read_json(dir / "manifest.json");
  std::ifstream in(dir / "params.bin", std::ios::binary);
  if (!in) throw DataError("cannot read " + (dir / "params.bin").string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto count = m.at("parameter_count").get<std::size_t>();
  if (bytes.size() != count * 4)
    throw DataError((dir / "params.bin").string() + " is corrupt: " + std::to_string(bytes.size()) +
                    " bytes, expected " + std::to_string(count * 4));
  if (m.at("params_fnv1a").get<std::string>() != hex64(fnv1a(bytes.data(), bytes.size())))
    throw DataError((dir / "params.bin").string() + " is corrupt: checksum mismatch");
  auto& store = model.params();
  const auto& table = m.at("parameters");
  if (table.size() != store.size())
    throw DataError(dir.string() + ": manifest lists " + std::to_string(table.size()) + " parameters, model has " +
                    std::to_string(store.size()));
  for (const auto& entry : table) {
    const auto name = entry.at("name").get<std::string>();
    Index idx = -1;
    try {
      idx = store.index_of(name);
    } catch (const std::invalid_argument&) {
      throw DataError(dir.string() + ": unknown parameter '" + name + "'");
    }
    auto& value = store.params()[static_cast<std::size_t>(idx)].var.mutable_value();
    const auto shape = entry.at("shape").get<Shape>();
    if (shape != value.shape())
      throw DataError(dir.string() + ": parameter '" + name + "' has shape " + shape_string(shape) +
                      " in the manifest but the architecture needs " + shape_string(value.shape()));
    const auto offset = entry.at("offset").get<std::size_t>();
    if (offset + static_cast<std::size_t>(value.numel()) > count)
      throw DataError(dir.string() + ": parameter '" + name + "' extends past params.bin");
    for (Index i = 0; i < value.numel(); ++i) {
      std::uint32_t u = 0;
      for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[(offset + i) * 4 + b]) << (8 * b);
      float f;
      std::memcpy(&f, &u, 4);
      value[i] = static_cast<typename std::decay_t<decltype(value)>::value_type>(f);
    }
  }
  if (info_out) *info_out = info;
  return model;
}

// Optimizer state: moments as little-endian float64 in parameter order.
template <typename T>
void save_adam(const std::filesystem::path& path, const Adam<T>& opt) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  auto put = [&out](std::uint64_t u) {
    for (int b = 0; b < 8; ++b) out.put(static_cast<char>(u >> (8 * b)));
  };
  put(static_cast<std::uint64_t>(opt.steps()));
  put(opt.first_moments().size());
  for (int which = 0; which < 2; ++which)
    for (const auto& vec : which == 0 ? opt.first_moments() : opt.second_moments()) {
      put(vec.size());
      for (double d : vec) {
        std::uint64_t u;
        std::memcpy(&u, &d, 8);
        put(u);
      }
    }
  if (!out) throw DataError("cannot write " + path.string());
}

template <typename T>
void load_adam(const std::filesystem::path& path, Adam<T>& opt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  auto get = [&in, &path]() {
    std::uint64_t u = 0;
    for (int b = 0; b < 8; ++b) {
      const int c = in.get();
      if (c == EOF) throw DataError(path.string() + " is truncated");
      u |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * b);
    }
    return u;
  };
  const auto t = static_cast<std::int64_t>(get());
  const auto n = get();
  if (n != opt.first_moments().size())
    throw DataError(path.string() + ": optimizer state covers " + std::to_string(n) + " parameters, model has " +
                    std::to_string(opt.first_moments().size()));
  std::vector<std::vector<double>> mv[2];
  for (auto& moments : mv)
    for (std::uint64_t i = 0; i < n; ++i) {
      std::vector<double> vec(get());
      for (double& d : vec) {
        const std::uint64_t u = get();
        std::memcpy(&d, &u, 8);
      }
      moments.push_back(std::move(vec));
    }
  try {
    opt.restore(t, std::move(mv[0]), std::move(mv[1]));
  } catch (const std::invalid_argument& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace modgen
