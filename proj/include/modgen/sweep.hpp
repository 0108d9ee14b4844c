#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <ostream>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "modgen/training.hpp"

namespace modgen {

// One (combo, seed) cell of the sweep: the pretrained classifier (source-only)
// and the jointly trained one (with-novel), both scored on the eval domain.
struct SweepRun {
  Combo combo;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double source_balanced = 0.0, source_unbalanced = 0.0;
  double novel_balanced = 0.0, novel_unbalanced = 0.0;
  double max_abs_diversity = 0.0;
  double novelty_step0 = 0.0, novelty_last_epoch = 0.0;
  int joint_epochs = 0;
};

struct SweepRow {
  Combo combo;
  std::vector<SweepRun> runs;

  bool failed() const {
    return std::any_of(runs.begin(), runs.end(), [](const SweepRun& r) { return !r.ok; });
  }
};

struct SweepTable {
  std::vector<SweepRow> rows;  // canonical combo order
};

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename F>
double median_of(const SweepRow& row, F field) {
  std::vector<double> v;
  for (const auto& r : row.runs)
    if (r.ok) v.push_back(field(r));
  return median(std::move(v));
}

inline std::filesystem::path sweep_cell_dir(const std::filesystem::path& out_dir, const Combo& combo,
                                            std::uint64_t seed) {
  return out_dir / "runs" / combo_name(combo) / ("seed_" + std::to_string(seed));
}

inline Json sweep_run_to_json(const SweepRun& r) {
  return {{"combo", combo_name(r.combo)},
          {"seed", r.seed},
          {"ok", r.ok},
          {"error", r.error},
          {"source_balanced", r.source_balanced},
          {"source_unbalanced", r.source_unbalanced},
          {"novel_balanced", r.novel_balanced},
          {"novel_unbalanced", r.novel_unbalanced},
          {"max_abs_diversity", r.max_abs_diversity},
          {"novelty_step0", r.novelty_step0},
          {"novelty_last_epoch", r.novelty_last_epoch},
          {"joint_epochs", r.joint_epochs}};
}

inline SweepRun sweep_run_from_json(const Json& j) {
  SweepRun r;
  r.combo = parse_combo(j.at("combo").get<std::string>());
  r.seed = j.at("seed").get<std::uint64_t>();
  r.ok = j.at("ok").get<bool>();
  r.error = j.at("error").get<std::string>();
  r.source_balanced = j.at("source_balanced").get<double>();
  r.source_unbalanced = j.at("source_unbalanced").get<double>();
  r.novel_balanced = j.at("novel_balanced").get<double>();
  r.novel_unbalanced = j.at("novel_unbalanced").get<double>();
  r.max_abs_diversity = j.at("max_abs_diversity").get<double>();
  r.novelty_step0 = j.at("novelty_step0").get<double>();
  r.novelty_last_epoch = j.at("novelty_last_epoch").get<double>();
  r.joint_epochs = j.at("joint_epochs").get<int>();
  return r;
}

// Data rows of a CSV as cells.
inline std::vector<std::vector<std::string>> read_csv_rows(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::size_t pos = 0;
    while (true) {
      const std::size_t comma = line.find(',', pos);
      cells.push_back(line.substr(pos, comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    rows.push_back(std::move(cells));
  }
  return rows;
}

// Runs one cell in `dir`. A cell whose result.json exists is read back; a
// partially finished cell reuses its pretrained classifier and resumes the
// joint phase from its newest epoch checkpoint.
inline SweepRun run_sweep_cell(const TrainConfig& base, const TrainingData& data, const DC& dc, const Combo& combo,
                               std::uint64_t seed, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (fs::exists(dir / "result.json")) return sweep_run_from_json(read_json(dir / "result.json"));
  SweepRun r;
  r.combo = combo;
  r.seed = seed;
  TrainConfig cfg = base;
  cfg.combo = combo;
  cfg.seed = seed;
  r.joint_epochs = cfg.joint_epochs;
  try {
    fs::create_directories(dir);
    write_text_file(dir / "config.txt", config_to_text(cfg));
    std::ofstream log(dir / "log.txt", std::ios::app);
    const DatasetIndex eval = data.store->index().filter(cfg.eval_domain);
    const std::string tag = domain_name(cfg.eval_domain);
    AC ac;
    if (fs::exists(dir / "ac" / "manifest.json")) {
      ac = load_action_classifier(dir / "ac", combo, cfg.desk_scale);
    } else {
      ac = pretrain_action_classifier(cfg, data, dir, &log).model;
    }
    const EvalReport src = evaluate_model(ac, *data.store, eval, combo, tag, cfg.chunk_length);
    r.source_balanced = src.balanced_accuracy;
    r.source_unbalanced = src.unbalanced_accuracy;
    const fs::path joint_dir = dir / "joint";
    JointOptions opts;
    opts.resume = fs::exists(joint_dir / "frozen" / "acf" / "manifest.json");
    const JointResult jr = joint_train(cfg, data, &dc, &ac, joint_dir, &log, opts);
    const EvalReport nov = evaluate_model(jr.ac, *data.store, eval, combo, tag, cfg.chunk_length);
    r.novel_balanced = nov.balanced_accuracy;
    r.novel_unbalanced = nov.unbalanced_accuracy;
    const auto steps = read_csv_rows(joint_dir / "metrics.csv");
    for (const auto& row : steps) r.max_abs_diversity = std::max(r.max_abs_diversity, std::fabs(std::stod(row.at(2))));
    if (!steps.empty()) r.novelty_step0 = std::stod(steps.front().at(1));
    const auto epochs = read_csv_rows(joint_dir / "epoch_summary.csv");
    if (!epochs.empty()) r.novelty_last_epoch = std::stod(epochs.back().at(2));
    r.ok = true;
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  write_json(dir / "result.json", sweep_run_to_json(r));
  return r;
}

inline const char* kSweepHeader =
    "row,combo,modalities,status,seeds,source_balanced,source_unbalanced,novel_balanced,novel_unbalanced,"
    "balanced_gain,max_abs_diversity";
inline const char* kSweepRunsHeader =
    "combo,seed,status,source_balanced,source_unbalanced,novel_balanced,novel_unbalanced,max_abs_diversity,"
    "novelty_step0,novelty_last_epoch,error";

inline std::string csv_safe(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  return s;
}

// Medians over successful seeds; a row with any failed seed is marked failed.
inline void write_sweep_table(const SweepTable& t, const std::filesystem::path& out_dir) {
  CsvWriter table(out_dir / "sweep_table.csv", kSweepHeader, false);
  CsvWriter runs(out_dir / "sweep_runs.csv", kSweepRunsHeader, false);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const SweepRow& row = t.rows[i];
    Index ok = 0;
    for (const auto& r : row.runs) ok += r.ok;
    const double sb = median_of(row, [](const SweepRun& r) { return r.source_balanced; });
    const double nb = median_of(row, [](const SweepRun& r) { return r.novel_balanced; });
    double div = 0.0;
    for (const auto& r : row.runs)
      if (r.ok) div = std::max(div, r.max_abs_diversity);
    table.row({std::to_string(i + 1), combo_name(row.combo), std::to_string(row.combo.size()),
               row.failed() ? "failed" : "ok", std::to_string(ok) + "/" + std::to_string(row.runs.size()),
               fmt_metric(sb), fmt_metric(median_of(row, [](const SweepRun& r) { return r.source_unbalanced; })),
               fmt_metric(nb), fmt_metric(median_of(row, [](const SweepRun& r) { return r.novel_unbalanced; })),
               fmt_metric(nb - sb), fmt_metric(div)});
    for (const auto& r : row.runs)
      runs.row({combo_name(r.combo), std::to_string(r.seed), r.ok ? "ok" : "failed", fmt_metric(r.source_balanced),
                fmt_metric(r.source_unbalanced), fmt_metric(r.novel_balanced), fmt_metric(r.novel_unbalanced),
                fmt_metric(r.max_abs_diversity), fmt_metric(r.novelty_step0), fmt_metric(r.novelty_last_epoch),
                csv_safe(r.error)});
  }
}

struct SweepOptions {
  int jobs = 1;
  std::vector<Combo> combos = canonical_combos();
};

// Every combo x seed cell, `jobs` cells at a time on worker threads. Results
// land in fixed slots, so the table does not depend on completion order.
inline SweepTable sweep_combinations(const TrainConfig& cfg, const TrainingData& data, const DC& dc,
                                     const std::filesystem::path& out_dir, std::ostream* log = nullptr,
                                     SweepOptions opts = {}) {
  require(opts.jobs >= 1, "jobs must be >= 1");
  require(!cfg.sweep_seeds.empty(), "sweep needs at least one seed");
  struct Cell {
    std::size_t row, slot;
  };
  SweepTable t;
  std::vector<Cell> cells;
  for (std::size_t i = 0; i < opts.combos.size(); ++i) {
    t.rows.push_back({opts.combos[i], std::vector<SweepRun>(cfg.sweep_seeds.size())});
    for (std::size_t s = 0; s < cfg.sweep_seeds.size(); ++s) cells.push_back({i, s});
  }
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto say = [&](const std::string& line) {
    std::lock_guard<std::mutex> lock(log_mutex);
    progress(log, line);
  };
  auto worker = [&]() {
    for (std::size_t c = next++; c < cells.size(); c = next++) {
      SweepRow& row = t.rows[cells[c].row];
      const std::uint64_t seed = cfg.sweep_seeds[cells[c].slot];
      say("sweep " + combo_name(row.combo) + " seed " + std::to_string(seed) + " started");
      SweepRun r = run_sweep_cell(cfg, data, dc, row.combo, seed, sweep_cell_dir(out_dir, row.combo, seed));
      say("sweep " + combo_name(row.combo) + " seed " + std::to_string(seed) +
          (r.ok ? " source=" + fmt_metric(r.source_balanced) + " novel=" + fmt_metric(r.novel_balanced)
                : " failed: " + r.error));
      row.runs[cells[c].slot] = std::move(r);
    }
  };
  const int n = std::min<int>(opts.jobs, static_cast<int>(cells.size()));
  std::vector<std::thread> pool;
  for (int i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  write_sweep_table(t, out_dir);
  return t;
}

// Pooled generator-bottleneck embeddings of sampled frames: label k for
// source modality k and 4 + k for its novel counterpart DG(x_k), embedded as
// DG's bottleneck of DG(x_k).
inline void dump_embeddings(const DG& dg, const FrameStore& store, const DatasetIndex& subset, int frames_per_video,
                            std::uint64_t seed, const std::filesystem::path& csv_path) {
  require(frames_per_video >= 1, "frames_per_video must be >= 1");
  std::map<std::string, std::size_t> item_of;
  const auto& all = store.index();
  for (std::size_t i = 0; i < all.items.size(); ++i) item_of[all.items[i].video_id] = i;
  std::mt19937_64 rng(stream_seed(seed, SeedStream::kDump));
  const Index d = dg.config().dg_channels[1];
  std::string header = "modality_label,video_id,frame_index";
  for (Index e = 0; e < d; ++e) header += ",e_" + std::to_string(e);
  CsvWriter csv(csv_path, header, false);
  NoGradGuard no_grad;
  for (const auto& it : subset.items) {
    const auto pos = item_of.find(it.video_id);
    require(pos != item_of.end(), "video " + it.video_id + " not in the frame store");
    if (it.frame_count < frames_per_video)
      throw DataError("video " + it.video_id + " has " + std::to_string(it.frame_count) + " frames, fewer than " +
                      std::to_string(frames_per_video));
    std::vector<Index> frames(static_cast<std::size_t>(it.frame_count));
    std::iota(frames.begin(), frames.end(), Index(0));
    for (int k = 0; k < frames_per_video; ++k) {
      std::uniform_int_distribution<Index> pick(k, it.frame_count - 1);
      std::swap(frames[static_cast<std::size_t>(k)], frames[static_cast<std::size_t>(pick(rng))]);
    }
    frames.resize(static_cast<std::size_t>(frames_per_video));
    std::vector<ModalityStack> stacks;
    for (Index f : frames) stacks.push_back(store.load_window(pos->second, f, 1, all_modalities()));
    const Tensor<Real> clips = to_clip_tensor(stacks).cast<Real>();
    for (int m = 0; m < kNumModalities; ++m) {
      const Var<Real> x(modality_frames(clips, static_cast<std::size_t>(m)));
      const Var<Real> src = dg.embed(x);
      const Var<Real> nov = dg.embed(dg.forward(x));
      for (int which = 0; which < 2; ++which) {
        const Var<Real>& e = which == 0 ? src : nov;
        for (int k = 0; k < frames_per_video; ++k) {
          std::vector<std::string> cells{std::to_string(m + which * kNumModalities), it.video_id,
                                         std::to_string(frames[static_cast<std::size_t>(k)])};
          for (Index j = 0; j < d; ++j) cells.push_back(fmt_metric(e.value()[k * d + j]));
          csv.row(cells);
        }
      }
    }
  }
}

}  // namespace modgen
