#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "modgen/checkpoint.hpp"
#include "modgen/config.hpp"
#include "modgen/dataset.hpp"
#include "modgen/evaluation.hpp"
#include "modgen/losses.hpp"
#include "modgen/models.hpp"
#include "modgen/nn.hpp"

namespace modgen {

using Real = float;
using DC = DomainClassifier<Real>;
using DG = DomainGenerator<Real>;
using AC = ActionClassifier<Real>;

// Independent RNG streams derived from the run seed.
enum class SeedStream : std::uint64_t {
  kDcInit = 1,
  kAcInit,
  kDgInit,
  kDcSampler,
  kAcSampler,
  kJointSampler,
  kJointFrames,
  kDump,
};

inline std::uint64_t stream_seed(std::uint64_t seed, SeedStream s) {
  return toy::mix_seed(seed, 0x6d6f6467656eull, static_cast<std::uint64_t>(s), 0);
}

inline std::string fmt_metric(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

// Append-only CSV; every row is flushed so an interrupted run keeps its log.
class CsvWriter {
 public:
  CsvWriter() = default;
  CsvWriter(const std::filesystem::path& path, const std::string& header, bool append) {
    std::filesystem::create_directories(path.parent_path());
    const bool fresh = !append || !std::filesystem::exists(path);
    out_.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!out_) throw DataError("cannot write " + path.string());
    if (fresh) out_ << header << "\n";
    out_.flush();
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out_ << (i ? "," : "") << cells[i];
    out_ << "\n";
    out_.flush();
  }

 private:
  std::ofstream out_;
};

// Keeps the header and the first `rows` data rows.
inline void truncate_csv(const std::filesystem::path& path, std::size_t rows) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line, kept;
  for (std::size_t i = 0; i <= rows && std::getline(in, line); ++i) kept += line + "\n";
  in.close();
  write_text_file(path, kept);
}

inline void progress(std::ostream* log, const std::string& line) {
  if (log) *log << line << std::endl;
}

// --- data -------------------------------------------------------------------

// Chunks of `subset`'s videos, with item indices into `full`.
inline std::vector<Chunk> chunks_in(const DatasetIndex& full, const DatasetIndex& subset, Index chunk_len) {
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < full.items.size(); ++i) pos[full.items[i].video_id] = i;
  std::vector<Chunk> out;
  for (const auto& it : subset.items) {
    const auto p = pos.find(it.video_id);
    require(p != pos.end(), "video " + it.video_id + " not in the dataset index");
    for (Index c = 0; c < chunk_count(it.frame_count, chunk_len); ++c) out.push_back({p->second, c * chunk_len, chunk_len});
  }
  return out;
}

struct TrainingData {
  std::shared_ptr<const FrameStore> store;
  DatasetIndex train, holdout;  // training-domain split
  std::vector<Chunk> train_chunks, holdout_chunks;

  int num_actions() const { return store->index().num_actions(); }
};

inline TrainingData prepare_training_data(std::shared_ptr<const FrameStore> store, const TrainConfig& cfg) {
  const DatasetIndex& full = store->index();
  if (full.items.empty()) throw DataError("dataset at " + full.root.string() + " has no videos");
  if (full.frame_height != cfg.frame_size || full.frame_width != cfg.frame_size)
    throw ConfigError("dataset frames are " + std::to_string(full.frame_height) + "x" +
                      std::to_string(full.frame_width) + " but frame_size=" + std::to_string(cfg.frame_size));
  TrainingData d;
  d.store = std::move(store);
  const DatasetIndex domain = full.filter(cfg.train_domain);
  d.train = domain.split(false, cfg.holdout_every);
  d.holdout = domain.split(true, cfg.holdout_every);
  d.train_chunks = chunks_in(full, d.train, cfg.chunk_length);
  d.holdout_chunks = chunks_in(full, d.holdout, cfg.chunk_length);
  if (d.train_chunks.empty())
    throw DataError("no " + std::string(domain_name(cfg.train_domain)) + " training chunks of " +
                    std::to_string(cfg.chunk_length) + " frames");
  return d;
}

inline Index steps_per_epoch(const TrainConfig& cfg, std::size_t num_chunks, Index per_step) {
  if (cfg.steps_per_epoch > 0) return cfg.steps_per_epoch;
  return (static_cast<Index>(num_chunks) + per_step - 1) / per_step;
}

inline CheckpointInfo info_for(ModelKind kind, const NetConfig& net, const TrainConfig& cfg) {
  CheckpointInfo info;
  info.kind = kind;
  info.net = net;
  info.desk_scale = cfg.desk_scale;
  if (kind == ModelKind::kAC) info.combo = cfg.combo;
  return info;
}

// Loads an action classifier and checks it was trained for `combo`.
inline AC load_action_classifier(const std::filesystem::path& dir, const Combo& combo,
                                 std::optional<bool> desk_scale = std::nullopt, CheckpointInfo* info = nullptr) {
  CheckpointInfo local;
  AC ac = load_checkpoint<AC>(dir, &local, desk_scale);
  if (!local.combo || *local.combo != combo)
    throw ConfigError(dir.string() + " was trained on " + (local.combo ? combo_name(*local.combo) : "unknown") +
                      " (" + std::to_string(local.net.input_channels) + " channels) but the run uses " +
                      combo_name(combo) + " (" + std::to_string(3 * combo.size()) + " channels)");
  if (info) *info = local;
  return ac;
}

// Frames [4n, 3, H, W] of single-frame stacks over all modalities, grouped by
// modality; labels are modality ids.
inline Tensor<Real> modality_batch(const std::vector<ModalityStack>& stacks, std::vector<int>* labels) {
  const Tensor<float> clips = to_clip_tensor(stacks);
  const Index n = clips.dim(0), h = clips.dim(3), w = clips.dim(4);
  Tensor<Real> out(Shape{kNumModalities * n, 3, h, w});
  labels->clear();
  for (int m = 0; m < kNumModalities; ++m) {
    const Tensor<float> f = modality_frames(clips, static_cast<std::size_t>(m));
    std::copy(f.data(), f.data() + f.numel(), out.data() + m * f.numel());
    labels->insert(labels->end(), static_cast<std::size_t>(n), m);
  }
  return out;
}

// Modality accuracy on the centre frame of each chunk.
inline double dc_accuracy(const DC& dc, const FrameStore& store, const std::vector<Chunk>& chunks) {
  if (chunks.empty()) return std::numeric_limits<double>::quiet_NaN();
  NoGradGuard no_grad;
  Index hit = 0, total = 0;
  for (std::size_t b0 = 0; b0 < chunks.size(); b0 += 16) {
    std::vector<ModalityStack> stacks;
    for (std::size_t i = b0; i < std::min(chunks.size(), b0 + 16); ++i)
      stacks.push_back(store.load_window(chunks[i].item, center_window_start(chunks[i], 1), 1, all_modalities()));
    std::vector<int> labels;
    const Var<Real> logits = dc.forward(Var<Real>(modality_batch(stacks, &labels))).logits;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      std::vector<double> row(kNumModalities);
      for (int k = 0; k < kNumModalities; ++k) row[k] = logits.value()[static_cast<Index>(i) * kNumModalities + k];
      hit += argmax(row.data(), kNumModalities) == labels[i];
      ++total;
    }
  }
  return static_cast<double>(hit) / static_cast<double>(total);
}

// --- domain classifier --------------------------------------------------------

struct DCResult {
  DC model;
  double holdout_accuracy = 0.0;
  Index steps = 0;
};

inline DCResult pretrain_domain_classifier(const TrainConfig& cfg, const TrainingData& data,
                                           const std::filesystem::path& out_dir, std::ostream* log = nullptr) {
  const NetConfig net = cfg.net(data.num_actions());
  DCResult r{DC(net, stream_seed(cfg.seed, SeedStream::kDcInit)), 0.0, 0};
  Adam<Real> opt(r.model.params(), cfg.adam);
  const Index per_step = cfg.dc_batch_size / kNumModalities;
  WindowSampler sampler(data.train_chunks, 1, stream_seed(cfg.seed, SeedStream::kDcSampler));
  const Index steps = steps_per_epoch(cfg, data.train_chunks.size(), per_step);
  CsvWriter csv(out_dir / "dc_metrics.csv", "step,loss,batch_accuracy", false);
  for (int epoch = 0; epoch < cfg.dc_epochs; ++epoch) {
    for (Index s = 0; s < steps; ++s, ++r.steps) {
      std::vector<ModalityStack> stacks;
      for (Index i = 0; i < per_step; ++i) {
        const WindowRef w = sampler.next();
        stacks.push_back(data.store->load_window(w.item, w.start, 1, all_modalities()));
      }
      std::vector<int> labels;
      const auto out = r.model.forward(Var<Real>(modality_batch(stacks, &labels)));
      const Var<Real> loss = cross_entropy(out.logits, labels);
      if (!std::isfinite(loss.item()))
        throw NumericalError("domain classifier loss is not finite at step " + std::to_string(r.steps));
      Index hit = 0;
      for (std::size_t i = 0; i < labels.size(); ++i) {
        std::vector<double> row(kNumModalities);
        for (int k = 0; k < kNumModalities; ++k) row[k] = out.logits.value()[static_cast<Index>(i) * kNumModalities + k];
        hit += argmax(row.data(), kNumModalities) == labels[i];
      }
      loss.backward();
      opt.step(r.model.params());
      r.model.params().zero_grad();
      csv.row({std::to_string(r.steps), fmt_metric(loss.item()),
               fmt_metric(static_cast<double>(hit) / static_cast<double>(labels.size()))});
      if (r.steps % cfg.log_every == 0)
        progress(log, "dc epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.dc_epochs) + " step " +
                          std::to_string(r.steps) + " loss=" + fmt_metric(loss.item()));
    }
  }
  r.holdout_accuracy = dc_accuracy(r.model, *data.store, data.holdout_chunks);
  CheckpointInfo info = info_for(ModelKind::kDC, net, cfg);
  info.extra = {{"epochs", cfg.dc_epochs}, {"steps", r.steps}, {"holdout_accuracy", r.holdout_accuracy}};
  save_checkpoint(out_dir / "dc", r.model, info);
  progress(log, "dc holdout modality accuracy " + fmt_metric(r.holdout_accuracy));
  return r;
}

// --- action classifier ------------------------------------------------------

struct ACResult {
  AC model;
  EvalReport holdout;
  Index steps = 0;
};

inline Tensor<Real> load_clips(const FrameStore& store, const std::vector<WindowRef>& refs, Index s,
                               const Combo& combo, std::vector<int>* labels) {
  std::vector<ModalityStack> stacks;
  labels->clear();
  for (const auto& w : refs) {
    stacks.push_back(store.load_window(w.item, w.start, s, combo));
    labels->push_back(stacks.back().label);
  }
  return to_clip_tensor(stacks);
}

inline ACResult pretrain_action_classifier(const TrainConfig& cfg, const TrainingData& data,
                                           const std::filesystem::path& out_dir, std::ostream* log = nullptr) {
  const NetConfig net = cfg.net(data.num_actions());
  ACResult r{AC(net, stream_seed(cfg.seed, SeedStream::kAcInit)), {}, 0};
  Adam<Real> opt(r.model.params(), cfg.adam);
  WindowSampler sampler(data.train_chunks, cfg.sequence_length, stream_seed(cfg.seed, SeedStream::kAcSampler));
  const Index steps = steps_per_epoch(cfg, data.train_chunks.size(), cfg.batch_size);
  CsvWriter csv(out_dir / "ac_metrics.csv", "step,loss", false);
  for (int epoch = 0; epoch < cfg.ac_epochs; ++epoch) {
    for (Index s = 0; s < steps; ++s, ++r.steps) {
      std::vector<WindowRef> refs;
      for (int i = 0; i < cfg.batch_size; ++i) refs.push_back(sampler.next());
      std::vector<int> labels;
      Tensor<Real> clips = load_clips(*data.store, refs, cfg.sequence_length, cfg.combo, &labels);
      const Var<Real> loss = cross_entropy(r.model.forward(Var<Real>(std::move(clips))), labels);
      if (!std::isfinite(loss.item()))
        throw NumericalError("action classifier loss is not finite at step " + std::to_string(r.steps));
      loss.backward();
      opt.step(r.model.params());
      r.model.params().zero_grad();
      csv.row({std::to_string(r.steps), fmt_metric(loss.item())});
      if (r.steps % cfg.log_every == 0)
        progress(log, "ac epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.ac_epochs) + " step " +
                          std::to_string(r.steps) + " loss=" + fmt_metric(loss.item()));
    }
  }
  CheckpointInfo info = info_for(ModelKind::kAC, net, cfg);
  info.extra = {{"epochs", cfg.ac_epochs}, {"steps", r.steps}};
  if (!data.holdout.items.empty()) {
    r.holdout = evaluate_model(r.model, *data.store, data.holdout, cfg.combo, "holdout", cfg.chunk_length);
    info.extra["holdout_balanced_accuracy"] = r.holdout.balanced_accuracy;
    progress(log, "ac holdout balanced accuracy " + fmt_metric(r.holdout.balanced_accuracy));
  }
  save_checkpoint(out_dir / "ac", r.model, info);
  return r;
}

// --- joint training -----------------------------------------------------------

template <typename T>
struct JointLosses {
  Var<T> novelty, diversity, class_term, cycle, dg_objective, ac_task;
  bool has_ac_task = false;

  LossReport report() const {
    LossReport r;
    r.novelty = novelty.item();
    r.diversity = diversity.item();
    r.class_term = class_term.item();
    r.cycle = cycle.item();
    r.dg_total = dg_objective.item();
    r.ac_task = has_ac_task ? static_cast<double>(ac_task.item()) : 0.0;
    return r;
  }
};

// One joint step's graph. clips: [B, S, 3m, H, W]; dc_rows index the B*S
// frames embedded by the domain classifier. The trainable classifier sees the
// novel clips detached, so only the frozen copy routes error into the generator.
template <typename T>
JointLosses<T> joint_losses(const DomainGenerator<T>& dg, const DomainClassifier<T>& dc,
                            const ActionClassifier<T>& acf, const ActionClassifier<T>* ac, const Tensor<T>& clips,
                            const std::vector<int>& labels, const std::vector<Index>& dc_rows,
                            const LossWeights& w, const SinkhornConfig& sk) {
  require(clips.rank() == 5 && clips.dim(2) % 3 == 0, "joint_losses expects [B, S, 3m, H, W] clips");
  const Index b = clips.dim(0), s = clips.dim(1), h = clips.dim(3), wd = clips.dim(4);
  const std::size_t m = static_cast<std::size_t>(clips.dim(2) / 3);
  std::vector<Var<T>> src, nov, src_emb, nov_emb, parts;
  for (std::size_t j = 0; j < m; ++j) {
    src.emplace_back(modality_frames(clips, j));
    nov.push_back(dg.forward(src.back()));
    parts.push_back(reshape(nov.back(), Shape{b, s, 3, h, wd}));
    {
      NoGradGuard no_grad;
      src_emb.push_back(dc.forward(Var<T>(index_rows(src.back(), dc_rows).value())).embedding);
    }
    nov_emb.push_back(dc.forward(index_rows(nov.back(), dc_rows)).embedding);
  }
  const Var<T> novel = m == 1 ? parts[0] : concat(parts, 2);
  JointLosses<T> r;
  r.class_term = class_loss<T>({acf.forward(novel)}, {labels});
  r.novelty = novelty_loss(src_emb, nov_emb, sk);
  r.diversity = diversity_loss(nov_emb, sk);
  r.cycle = cycle_loss_from_novel<T>([&dg](const Var<T>& x) { return dg.forward(x); }, src, nov);
  r.dg_objective = dg_objective(r.class_term, r.cycle, r.novelty, r.diversity, w);
  if (ac) {
    r.ac_task = ac_task_loss<T>({ac->forward(Var<T>(clips))}, {ac->forward(novel.detach())}, {labels}, w.alpha);
    r.has_ac_task = true;
  }
  return r;
}

// Distinct frame picks per clip for the embedding terms.
inline std::vector<Index> sample_frame_rows(std::mt19937_64& rng, Index b, Index s, Index per_clip) {
  std::vector<Index> rows;
  std::vector<Index> t(static_cast<std::size_t>(s));
  for (Index i = 0; i < b; ++i) {
    std::iota(t.begin(), t.end(), Index(0));
    for (Index k = 0; k < per_clip; ++k) {
      std::uniform_int_distribution<Index> pick(k, s - 1);
      std::swap(t[static_cast<std::size_t>(k)], t[static_cast<std::size_t>(pick(rng))]);
      rows.push_back(i * s + t[static_cast<std::size_t>(k)]);
    }
  }
  return rows;
}

struct EpochSummary {
  int epoch = 0;
  Index steps = 0;
  LossReport mean;
  std::uint64_t dc_hash = 0, acf_hash = 0;
};

struct JointOptions {
  bool resume = false;
  int stop_after_epoch = -1;  // stop once this many epochs are done (simulated interruption)
};

struct JointResult {
  DG dg;
  AC ac;
  std::vector<EpochSummary> epochs;  // epochs run in this call
  LossReport first_step;             // step 0 of the run, when run in this call
  int epochs_done = 0;
  bool complete = false;
};

inline std::filesystem::path epoch_dir(const std::filesystem::path& out_dir, int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch_%03d", epoch);
  return out_dir / "checkpoints" / buf;
}

inline std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream s;
  s << rng;
  return s.str();
}

inline void rng_from_string(std::mt19937_64& rng, const std::string& text) {
  std::istringstream s(text);
  s >> rng;
  if (!s) throw DataError("corrupt rng state in checkpoint");
}

inline const char* kMetricsHeader = "step,novelty,diversity,class,cycle,dg_total,ac_task";
inline const char* kEpochHeader = "epoch,steps,novelty,diversity,class,cycle,dg_total,ac_task,dc_hash,acf_hash";

inline std::vector<std::string> metric_cells(const LossReport& r) {
  return {fmt_metric(r.novelty), fmt_metric(r.diversity), fmt_metric(r.class_term),
          fmt_metric(r.cycle),   fmt_metric(r.dg_total),  fmt_metric(r.ac_task)};
}

// Runs (or resumes) the joint phase in out_dir. A fresh run stores the frozen
// DC and AC_f under out_dir/frozen; resume reloads them and the newest
// complete epoch checkpoint, then trims the logs back to that point.
inline JointResult joint_train(const TrainConfig& cfg, const TrainingData& data, const DC* dc_in, const AC* ac_in,
                               const std::filesystem::path& out_dir, std::ostream* log = nullptr,
                               JointOptions opts = {}) {
  namespace fs = std::filesystem;
  const NetConfig net = cfg.net(data.num_actions());
  DC dc;
  AC acf;
  JointResult r;
  std::mt19937_64 frame_rng(stream_seed(cfg.seed, SeedStream::kJointFrames));
  WindowSampler sampler(data.train_chunks, cfg.sequence_length, stream_seed(cfg.seed, SeedStream::kJointSampler));
  Index step = 0;
  int start_epoch = 0;
  Adam<Real> dg_opt, ac_opt;

  if (!opts.resume) {
    require(dc_in && ac_in, "joint_train needs the pretrained DC and AC");
    if (ac_in->config().input_channels != net.input_channels)
      throw ConfigError("pretrained AC has " + std::to_string(ac_in->config().input_channels) +
                        " input channels but combo " + combo_name(cfg.combo) + " needs " +
                        std::to_string(net.input_channels));
    dc = freeze_copy(*dc_in);
    acf = freeze_copy(*ac_in);
    r.ac = *ac_in;
    r.ac.params().set_frozen(false);
    r.dg = DG(net, stream_seed(cfg.seed, SeedStream::kDgInit));
    save_checkpoint(out_dir / "frozen" / "dc", dc, info_for(ModelKind::kDC, dc.config(), cfg));
    save_checkpoint(out_dir / "frozen" / "acf", acf, info_for(ModelKind::kAC, acf.config(), cfg));
    dg_opt = Adam<Real>(r.dg.params(), cfg.adam);
    ac_opt = Adam<Real>(r.ac.params(), cfg.adam);
  } else {
    dc = freeze_copy(load_checkpoint<DC>(out_dir / "frozen" / "dc", nullptr, cfg.desk_scale));
    acf = freeze_copy(load_action_classifier(out_dir / "frozen" / "acf", cfg.combo, cfg.desk_scale));
    int latest = -1;
    if (fs::is_directory(out_dir / "checkpoints"))
      for (const auto& e : fs::directory_iterator(out_dir / "checkpoints")) {
        const std::string name = e.path().filename().string();
        if (name.rfind("epoch_", 0) == 0 && fs::exists(e.path() / "state.json"))
          latest = std::max(latest, std::stoi(name.substr(6)));
      }
    if (latest < 0) {
      r.dg = DG(net, stream_seed(cfg.seed, SeedStream::kDgInit));
      r.ac = load_action_classifier(out_dir / "frozen" / "acf", cfg.combo, cfg.desk_scale);
      dg_opt = Adam<Real>(r.dg.params(), cfg.adam);
      ac_opt = Adam<Real>(r.ac.params(), cfg.adam);
      for (const char* f : {"metrics.csv", "epoch_summary.csv"})
        if (fs::exists(out_dir / f)) truncate_csv(out_dir / f, 0);
    } else {
      const fs::path ck = epoch_dir(out_dir, latest);
      const Json st = read_json(ck / "state.json");
      r.dg = load_checkpoint<DG>(ck / "dg", nullptr, cfg.desk_scale);
      r.ac = load_action_classifier(ck / "ac", cfg.combo, cfg.desk_scale);
      dg_opt = Adam<Real>(r.dg.params(), cfg.adam);
      ac_opt = Adam<Real>(r.ac.params(), cfg.adam);
      load_adam(ck / "dg_adam.bin", dg_opt);
      load_adam(ck / "ac_adam.bin", ac_opt);
      sampler.set_rng_state(st.at("sampler_rng").get<std::string>());
      rng_from_string(frame_rng, st.at("frame_rng").get<std::string>());
      step = st.at("step").get<Index>();
      start_epoch = st.at("epoch").get<int>();
      truncate_csv(out_dir / "metrics.csv", static_cast<std::size_t>(step));
      truncate_csv(out_dir / "epoch_summary.csv", static_cast<std::size_t>(start_epoch));
    }
    progress(log, "resuming joint training at epoch " + std::to_string(start_epoch) + ", step " + std::to_string(step));
  }
  if (dc.config().frame_size != net.frame_size)
    throw ConfigError("domain classifier was built for frame_size " + std::to_string(dc.config().frame_size));

  CsvWriter metrics(out_dir / "metrics.csv", kMetricsHeader, opts.resume);
  CsvWriter epochs_csv(out_dir / "epoch_summary.csv", kEpochHeader, opts.resume);
  const Index steps = steps_per_epoch(cfg, data.train_chunks.size(), cfg.batch_size);
  const Index s = cfg.sequence_length;
  r.epochs_done = start_epoch;

  for (int epoch = start_epoch; epoch < cfg.joint_epochs; ++epoch) {
    if (opts.stop_after_epoch >= 0 && epoch >= opts.stop_after_epoch) return r;
    EpochSummary sum;
    sum.epoch = epoch;
    for (Index it = 0; it < steps; ++it, ++step) {
      std::vector<WindowRef> refs;
      for (int i = 0; i < cfg.batch_size; ++i) refs.push_back(sampler.next());
      std::vector<int> labels;
      const Tensor<Real> clips = load_clips(*data.store, refs, s, cfg.combo, &labels);
      const auto rows = sample_frame_rows(frame_rng, cfg.batch_size, s, cfg.dc_frames_per_clip);
      JointLosses<Real> g;
      LossReport rep;
      std::string failure;
      try {
        g = joint_losses(r.dg, dc, acf, &r.ac, clips, labels, rows, cfg.weights, cfg.sinkhorn);
        rep = g.report();
      } catch (const NumericalError& e) {
        failure = e.what();
      }
      if (!failure.empty() || !rep.finite()) {
        const double nan = std::numeric_limits<double>::quiet_NaN();
        if (!failure.empty()) rep = {nan, nan, nan, nan, nan, nan};
        Json dump = {{"step", step}, {"epoch", epoch}, {"novelty", rep.novelty}, {"diversity", rep.diversity},
                     {"class", rep.class_term}, {"cycle", rep.cycle}, {"ac_task", rep.ac_task}};
        if (!failure.empty()) dump["error"] = failure;
        std::string batch;
        for (const auto& w : refs) {
          const std::string id = data.store->index().items[w.item].video_id + "@" + std::to_string(w.start);
          dump["batch"].push_back(id);
          batch += (batch.empty() ? "" : " ") + id;
        }
        write_json(out_dir / "nan_dump.json", dump);
        throw NumericalError("non-finite loss at step " + std::to_string(step) + " (epoch " +
                             std::to_string(epoch) + "), batch " + batch + (failure.empty() ? "" : " (" + failure + ")") +
                             "; details in " +
                             (out_dir / "nan_dump.json").string());
      }
      g.dg_objective.backward();
      g.ac_task.backward();
      dg_opt.step(r.dg.params());
      ac_opt.step(r.ac.params());
      r.dg.params().zero_grad();
      r.ac.params().zero_grad();
      std::vector<std::string> cells{std::to_string(step)};
      const auto mc = metric_cells(rep);
      cells.insert(cells.end(), mc.begin(), mc.end());
      metrics.row(cells);
      if (step == 0) r.first_step = rep;
      sum.mean.novelty += rep.novelty;
      sum.mean.diversity += rep.diversity;
      sum.mean.class_term += rep.class_term;
      sum.mean.cycle += rep.cycle;
      sum.mean.dg_total += rep.dg_total;
      sum.mean.ac_task += rep.ac_task;
      ++sum.steps;
      if (step % cfg.log_every == 0)
        progress(log, "joint epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.joint_epochs) +
                          " step " + std::to_string(step) + " novelty=" + fmt_metric(rep.novelty) +
                          " diversity=" + fmt_metric(rep.diversity) + " class=" + fmt_metric(rep.class_term) +
                          " cycle=" + fmt_metric(rep.cycle) + " dg_total=" + fmt_metric(rep.dg_total) +
                          " ac_task=" + fmt_metric(rep.ac_task));
    }
    const double n = static_cast<double>(std::max<Index>(1, sum.steps));
    for (double* v : {&sum.mean.novelty, &sum.mean.diversity, &sum.mean.class_term, &sum.mean.cycle,
                      &sum.mean.dg_total, &sum.mean.ac_task})
      *v /= n;
    sum.dc_hash = dc.hash();
    sum.acf_hash = acf.hash();
    std::vector<std::string> cells{std::to_string(epoch), std::to_string(sum.steps)};
    const auto mc = metric_cells(sum.mean);
    cells.insert(cells.end(), mc.begin(), mc.end());
    cells.push_back(hex64(sum.dc_hash));
    cells.push_back(hex64(sum.acf_hash));
    epochs_csv.row(cells);
    r.epochs.push_back(sum);

    const fs::path ck = epoch_dir(out_dir, epoch + 1);
    fs::remove_all(ck);
    save_checkpoint(ck / "dg", r.dg, info_for(ModelKind::kDG, net, cfg));
    save_checkpoint(ck / "ac", r.ac, info_for(ModelKind::kAC, net, cfg));
    save_adam(ck / "dg_adam.bin", dg_opt);
    save_adam(ck / "ac_adam.bin", ac_opt);
    write_json(ck / "state.json", {{"epoch", epoch + 1},
                                   {"step", step},
                                   {"sampler_rng", sampler.rng_state()},
                                   {"frame_rng", rng_to_string(frame_rng)}});
    r.epochs_done = epoch + 1;
  }
  save_checkpoint(out_dir / "dg", r.dg, info_for(ModelKind::kDG, net, cfg));
  save_checkpoint(out_dir / "ac", r.ac, info_for(ModelKind::kAC, net, cfg));
  r.complete = true;
  return r;
}

}  // namespace modgen
