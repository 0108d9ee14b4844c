#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "modgen/dataset.hpp"
#include "modgen/errors.hpp"
#include "modgen/extraction.hpp"
#include "modgen/losses.hpp"
#include "modgen/models.hpp"
#include "modgen/nn.hpp"
#include "modgen/sinkhorn.hpp"
#include "modgen/toy.hpp"

namespace modgen {

// Every tunable of a run. Field defaults are the full-scale values; the desk
// preset is applied by resolve_config.
struct TrainConfig {
  bool desk_scale = true;
  std::uint64_t seed = 0;
  bool deterministic = true;
  Combo combo = all_modalities();

  int frame_size = 112;
  int sequence_length = 16;
  int chunk_length = 90;
  int holdout_every = 3;
  Domain train_domain = Domain::kSynthetic;
  Domain eval_domain = Domain::kReal;

  ToyConfig toy;
  ExtractConfig extract;

  std::array<int, 4> dc_widths{64, 128, 256, 512};
  std::array<int, 2> dg_channels{64, 128};
  int dg_res_blocks = 2;
  std::array<int, 4> ac_widths{64, 128, 256, 512};

  AdamConfig adam;
  LossWeights weights;
  SinkhornConfig sinkhorn;

  int batch_size = 8;
  int dc_epochs = 20;
  int dc_batch_size = 32;
  int dc_frames_per_clip = 16;
  int ac_epochs = 200;
  int joint_epochs = 50;
  int steps_per_epoch = 0;  // 0: ceil(chunks / batch)
  int log_every = 10;

  std::vector<std::uint64_t> sweep_seeds{0};
  int dump_frames_per_video = 10;

  NetConfig net(int num_actions) const {
    NetConfig n;
    n.dc_widths = dc_widths;
    n.dg_channels = dg_channels;
    n.dg_res_blocks = dg_res_blocks;
    n.ac_widths = ac_widths;
    n.embedding_dim = dc_widths[3];
    n.num_actions = num_actions;
    n.input_channels = 3 * static_cast<int>(combo.size());
    n.frame_size = frame_size;
    n.sequence_length = sequence_length;
    return n;
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep)) out.push_back(trim(part));
  return out;
}

template <typename N>
N parse_number(const std::string& key, const std::string& v) {
  N out{};
  const auto* end = v.data() + v.size();
  const auto r = std::from_chars(v.data(), end, out);
  if (v.empty() || r.ec != std::errc() || r.ptr != end)
    throw ConfigError("key '" + key + "': cannot parse '" + v + "' as a number");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': expected true/false, got '" + v + "'");
}

template <typename N>
std::vector<N> parse_list(const std::string& key, const std::string& v) {
  std::vector<N> out;
  for (const auto& p : split(v, ',')) out.push_back(parse_number<N>(key, p));
  return out;
}

template <typename N, std::size_t K>
std::array<N, K> parse_array(const std::string& key, const std::string& v) {
  const auto list = parse_list<N>(key, v);
  if (list.size() != K)
    throw ConfigError("key '" + key + "': expected " + std::to_string(K) + " comma-separated values");
  std::array<N, K> out{};
  std::copy(list.begin(), list.end(), out.begin());
  return out;
}

inline std::string fmt(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}
template <typename N>
std::string fmt_list(const N& xs) {
  std::string s;
  for (const auto& x : xs) s += (s.empty() ? "" : ",") + std::to_string(x);
  return s;
}
inline std::string fmt(bool b) { return b ? "true" : "false"; }

}  // namespace config_detail

struct ConfigKey {
  std::string name;
  std::string desk;  // desk-preset value, empty when the preset keeps the default
  std::string help;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
  using namespace config_detail;
  using C = TrainConfig;
  using S = const std::string&;
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto add = [&k](std::string name, std::string desk, std::string help,
                    std::function<void(C&, S)> set, std::function<std::string(const C&)> get) {
      k.push_back({std::move(name), std::move(desk), std::move(help), std::move(set), std::move(get)});
    };
#define MODGEN_INT(NAME, FIELD, DESK, HELP)                                                   \
  add(NAME, DESK, HELP, [](C& c, S v) { c.FIELD = parse_number<int>(NAME, v); },             \
      [](const C& c) { return std::to_string(c.FIELD); })
#define MODGEN_DBL(NAME, FIELD, DESK, HELP)                                                   \
  add(NAME, DESK, HELP, [](C& c, S v) { c.FIELD = parse_number<double>(NAME, v); },          \
      [](const C& c) { return fmt(c.FIELD); })
#define MODGEN_BOOL(NAME, FIELD, DESK, HELP) \
  add(NAME, DESK, HELP, [](C& c, S v) { c.FIELD = parse_bool(NAME, v); }, [](const C& c) { return fmt(c.FIELD); })

    MODGEN_BOOL("desk_scale", desk_scale, "", "apply the desk preset column below to keys not set explicitly");
    add("seed", "", "RNG seed for initialization and sampling",
        [](C& c, S v) { c.seed = parse_number<std::uint64_t>("seed", v); },
        [](const C& c) { return std::to_string(c.seed); });
    MODGEN_BOOL("deterministic", deterministic, "", "single-threaded, order-fixed execution");
    add("combo", "", "source modalities, '+'-separated (rgb, heatmaps, limbs, flow)",
        [](C& c, S v) { c.combo = parse_combo(v); }, [](const C& c) { return combo_name(c.combo); });

    MODGEN_INT("frame_size", frame_size, "32", "square frame side in pixels");
    MODGEN_INT("sequence_length", sequence_length, "", "frames per classifier window S");
    MODGEN_INT("chunk_length", chunk_length, "", "frames per training chunk");
    MODGEN_INT("holdout_every", holdout_every, "", "every n-th video per (domain, action) is held out");
    add("train_domain", "", "domain used for training", [](C& c, S v) { c.train_domain = parse_domain(v); },
        [](const C& c) { return std::string(domain_name(c.train_domain)); });
    add("eval_domain", "", "shifted domain used for evaluation", [](C& c, S v) { c.eval_domain = parse_domain(v); },
        [](const C& c) { return std::string(domain_name(c.eval_domain)); });

    MODGEN_INT("toy_actions", toy.num_actions, "", "toy dataset: number of action classes");
    MODGEN_INT("toy_videos_per_action", toy.videos_per_action, "6", "toy dataset: videos per action and domain");
    MODGEN_INT("toy_frames", toy.frames_per_video, "", "toy dataset: frames per video");
    add("toy_seed", "", "toy dataset: generator seed",
        [](C& c, S v) { c.toy.seed = parse_number<std::uint64_t>("toy_seed", v); },
        [](const C& c) { return std::to_string(c.toy.seed); });

    MODGEN_DBL("heatmap_sigma", extract.heatmap_sigma, "2", "Gaussian std of joint heatmaps (px)");
    MODGEN_INT("limb_width", extract.limb_width, "1", "limb line width (px)");
    MODGEN_DBL("flow_max_magnitude", extract.flow_max_magnitude, "3", "flow magnitude mapped to full brightness (px)");
    MODGEN_INT("flow_levels", extract.flow.pyramid_levels, "", "Farneback pyramid levels");
    MODGEN_DBL("flow_pyr_scale", extract.flow.pyramid_scale, "", "Farneback pyramid scale");
    MODGEN_INT("flow_window", extract.flow.window_size, "", "Farneback averaging window");
    MODGEN_INT("flow_iterations", extract.flow.iterations, "", "Farneback iterations per level");
    MODGEN_INT("flow_poly_n", extract.flow.poly_n, "", "Farneback polynomial neighbourhood");
    MODGEN_DBL("flow_poly_sigma", extract.flow.poly_sigma, "", "Farneback polynomial sigma");

    add("dc_widths", "8,16,32,32", "domain classifier stage widths; the last is the embedding size",
        [](C& c, S v) { c.dc_widths = parse_array<int, 4>("dc_widths", v); },
        [](const C& c) { return fmt_list(c.dc_widths); });
    add("dg_channels", "8,16", "domain generator channels after each down-sampling conv",
        [](C& c, S v) { c.dg_channels = parse_array<int, 2>("dg_channels", v); },
        [](const C& c) { return fmt_list(c.dg_channels); });
    MODGEN_INT("dg_res_blocks", dg_res_blocks, "", "domain generator residual blocks");
    add("ac_widths", "16,32,64,64", "action classifier block widths",
        [](C& c, S v) { c.ac_widths = parse_array<int, 4>("ac_widths", v); },
        [](const C& c) { return fmt_list(c.ac_widths); });

    MODGEN_DBL("lr", adam.lr, "1e-3", "Adam learning rate");
    MODGEN_DBL("beta1", adam.beta1, "", "Adam beta1");
    MODGEN_DBL("beta2", adam.beta2, "", "Adam beta2");
    MODGEN_DBL("adam_eps", adam.eps, "", "Adam epsilon");
    MODGEN_DBL("weight_decay", adam.weight_decay, "", "L2 weight decay on conv/linear weights");

    MODGEN_DBL("lambda_c", weights.lambda_c, "", "weight of the class-consistency term");
    MODGEN_DBL("lambda_r", weights.lambda_r, "", "weight of the cycle term");
    MODGEN_DBL("lambda_d", weights.lambda_d, "", "weight of the novelty and diversity terms");
    MODGEN_DBL("alpha", weights.alpha, "", "source share of the classifier task loss");

    MODGEN_DBL("sinkhorn_epsilon", sinkhorn.epsilon, "", "entropic regularization");
    MODGEN_BOOL("sinkhorn_relative", sinkhorn.relative_epsilon, "", "scale epsilon by mean(C)");
    MODGEN_INT("sinkhorn_max_iter", sinkhorn.max_iterations, "", "Sinkhorn iteration cap");
    MODGEN_DBL("sinkhorn_tol", sinkhorn.tolerance, "", "marginal residual tolerance");
    MODGEN_INT("sinkhorn_newton", sinkhorn.newton_steps, "", "Newton polish steps when iterations stall");

    MODGEN_INT("batch_size", batch_size, "", "windows per classifier / joint step");
    MODGEN_INT("dc_epochs", dc_epochs, "", "domain classifier epochs");
    MODGEN_INT("dc_batch_size", dc_batch_size, "", "frames per domain classifier step (split over 4 modalities)");
    MODGEN_INT("dc_frames_per_clip", dc_frames_per_clip, "2", "frames per window embedded for the novelty/diversity terms");
    MODGEN_INT("ac_epochs", ac_epochs, "30", "action classifier pretraining epochs");
    MODGEN_INT("joint_epochs", joint_epochs, "15", "joint generator/classifier epochs");
    MODGEN_INT("steps_per_epoch", steps_per_epoch, "", "0 derives ceil(chunks / batch_size)");
    MODGEN_INT("log_every", log_every, "", "progress line interval in steps");

    add("sweep_seeds", "", "comma-separated seeds per sweep row",
        [](C& c, S v) { c.sweep_seeds = parse_list<std::uint64_t>("sweep_seeds", v); },
        [](const C& c) { return fmt_list(c.sweep_seeds); });
    MODGEN_INT("dump_frames_per_video", dump_frames_per_video, "", "frames sampled per video for embedding dumps");
#undef MODGEN_INT
#undef MODGEN_DBL
#undef MODGEN_BOOL
    return k;
  }();
  return keys;
}

inline const ConfigKey& config_key(const std::string& name) {
  for (const auto& k : config_keys())
    if (k.name == name) return k;
  throw ConfigError("unknown config key '" + name + "'");
}

inline void validate(const TrainConfig& c) {
  try {
    require(!c.combo.empty(), "combo must be non-empty");
    require(c.frame_size >= 16 && c.frame_size % 4 == 0, "frame_size must be a multiple of 4, >= 16");
    require(c.sequence_length >= 1 && c.sequence_length <= c.chunk_length,
            "sequence_length must be in 1..chunk_length");
    require(c.holdout_every >= 2, "holdout_every must be >= 2");
    require(c.train_domain != c.eval_domain, "train_domain and eval_domain must differ");
    c.toy.validate();
    c.extract.validate();
    c.adam.validate();
    c.weights.validate();
    c.sinkhorn.validate();
    require(c.batch_size >= 1, "batch_size must be >= 1");
    require(c.dc_epochs >= 0 && c.ac_epochs >= 0 && c.joint_epochs >= 0, "epoch counts must be >= 0");
    require(c.dc_batch_size >= kNumModalities && c.dc_batch_size % kNumModalities == 0,
            "dc_batch_size must be a positive multiple of 4");
    require(c.dc_frames_per_clip >= 1 && c.dc_frames_per_clip <= c.sequence_length,
            "dc_frames_per_clip must be in 1..sequence_length");
    require(c.steps_per_epoch >= 0, "steps_per_epoch must be >= 0");
    require(c.log_every >= 1, "log_every must be >= 1");
    require(!c.sweep_seeds.empty(), "sweep_seeds must be non-empty");
    require(c.dump_frames_per_video >= 1, "dump_frames_per_video must be >= 1");
    c.net(c.toy.num_actions).validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

// Ordered key=value assignments, as read from a file or the command line.
using Assignments = std::vector<std::pair<std::string, std::string>>;

inline std::pair<std::string, std::string> parse_assignment(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + text + "'");
  auto key = config_detail::trim(text.substr(0, eq));
  auto value = config_detail::trim(text.substr(eq + 1));
  config_key(key);
  return {key, value};
}

inline Assignments read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  Assignments out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    try {
      out.push_back(parse_assignment(line));
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

// Defaults, then the desk preset if desk_scale ends up true, then the
// assignments in order (later ones win).
inline TrainConfig resolve_config(const Assignments& assignments) {
  TrainConfig c;
  for (const auto& [k, v] : assignments)
    if (k == "desk_scale") c.desk_scale = config_detail::parse_bool(k, v);
  if (c.desk_scale)
    for (const auto& key : config_keys())
      if (!key.desk.empty()) key.set(c, key.desk);
  for (const auto& [k, v] : assignments) {
    try {
      config_key(k).set(c, v);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("key '" + k + "': " + e.what());
    }
  }
  c.toy.frame_size = c.frame_size;
  validate(c);
  return c;
}

// key = value lines in table order; resolving the output reproduces c.
inline std::string config_to_text(const TrainConfig& c) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(c) + "\n";
  return out;
}

inline std::map<std::string, std::string> config_to_map(const TrainConfig& c) {
  std::map<std::string, std::string> out;
  for (const auto& k : config_keys()) out[k.name] = k.get(c);
  return out;
}

inline std::string config_help() {
  TrainConfig full;
  std::ostringstream os;
  os << "Config keys (default / desk preset):\n";
  for (const auto& k : config_keys()) {
    os << "  " << k.name << " = " << k.get(full);
    if (!k.desk.empty()) os << "  [desk: " << k.desk << "]";
    os << "\n      " << k.help << "\n";
  }
  return os.str();
}

}  // namespace modgen
