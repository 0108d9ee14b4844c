// Acceptance checks, one per criterion. With no arguments every criterion
// runs; otherwise only the numbered ones. Prints one PASS/FAIL line each and
// exits nonzero if any failed.
//
// The desk-scale criteria share a cache (toy dataset, pretrained classifiers,
// sweep cells) under MODGEN_ACCEPTANCE_CACHE, so a rerun resumes the sweep
// instead of starting over.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "flow_fixtures.hpp"
#include "modgen/sweep.hpp"
#include "oracles.hpp"
#include "pose_oracle.hpp"

namespace fs = std::filesystem;
using namespace modgen;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

fs::path cache_root() {
  if (const char* env = std::getenv("MODGEN_ACCEPTANCE_CACHE")) return env;
  return MODGEN_ACCEPTANCE_CACHE_DEFAULT;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const fs::path& p) {
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::ostream* quiet() {
  static std::ofstream sink;
  return &sink;
}

// Desk-scale defaults with the five sweep seeds.
TrainConfig desk_config(Assignments extra = {}) {
  Assignments a{{"sweep_seeds", "0,1,2,3,4"}};
  a.insert(a.end(), extra.begin(), extra.end());
  return resolve_config(a);
}

// The toy two-domain benchmark at desk scale, generated once.
TrainingData desk_data(const TrainConfig& cfg) {
  const fs::path root = cache_root() / "toy";
  if (!fs::exists(root / "manifest.json")) {
    fresh_dir(root);
    const DatasetIndex idx = make_toy_dataset(cfg.toy, root, cfg.extract);
    write_json(root / "manifest.json", Json{{"command", "make-toy"}, {"videos", idx.items.size()}});
  }
  return prepare_training_data(std::make_shared<FrameStore>(scan_dataset(root)), cfg);
}

// The sweep's domain classifier; the same file the command-line sweep reuses.
DC desk_dc(const TrainConfig& cfg, const TrainingData& data) {
  const fs::path dir = cache_root() / "sweep";
  if (fs::exists(dir / "dc" / "manifest.json")) return load_checkpoint<DC>(dir / "dc", nullptr, cfg.desk_scale);
  return pretrain_domain_classifier(cfg, data, dir, quiet()).model;
}

AC desk_ac(const TrainConfig& cfg, const TrainingData& data) {
  const fs::path dir = cache_root() / "pretrain";
  if (fs::exists(dir / "ac" / "manifest.json")) return load_action_classifier(dir / "ac", cfg.combo, cfg.desk_scale);
  return pretrain_action_classifier(cfg, data, dir, quiet()).model;
}

// Cells computed under a different configuration are discarded, so the
// cache can never answer for settings it was not built with.
void drop_stale_cell(const TrainConfig& base, const Combo& combo, std::uint64_t seed, const fs::path& dir) {
  if (!fs::exists(dir)) return;
  TrainConfig cfg = base;
  cfg.combo = combo;
  cfg.seed = seed;
  if (slurp(dir / "config.txt") != config_to_text(cfg)) fs::remove_all(dir);
}

std::size_t csv_data_rows(const fs::path& p) { return read_csv_rows(p).size(); }

bool same_bytes(const fs::path& a, const fs::path& b) {
  return fs::exists(a) && fs::exists(b) && slurp(a) == slurp(b);
}

void sinkhorn_vs_exact(Outcome& o) {
  SinkhornConfig cfg;
  cfg.epsilon = 0.01;
  cfg.relative_epsilon = true;
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> pick_b(2, 6), pick_e(2, 8);
  int within = 0;
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int b = pick_b(rng), e = pick_e(rng);
    const EmbeddingBatch x = testing::random_matrix(rng, b, e);
    const EmbeddingBatch y = testing::random_matrix(rng, b, e);
    const double exact = testing::exact_ot_oracle(x, y);
    const double err = std::abs(sinkhorn_distance(x, y, cfg).distance - exact);
    worst = std::max(worst, err / (0.05 * exact + 1e-3));
    within += err <= 0.05 * exact + 1e-3;
  }
  o.detail << within << "/100 within tolerance, worst error/tolerance " << worst;
  o.require(within == 100, "all instances within 0.05*oracle+1e-3");
}

void heatmap_exactness(Outcome& o) {
  std::mt19937 rng(77);
  std::uniform_int_distribution<int> size(8, 48);
  std::uniform_real_distribution<double> sig(0.5, 8.0);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int h = size(rng), w = size(rng);
    const PoseSkeleton s = testing::random_skeleton(rng, h, w);
    const double sigma = sig(rng);
    const Plane p = render_heatmaps(s, sigma);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        worst = std::max(worst, std::abs(p[static_cast<Index>(y) * w + x] - testing::naive_heatmap(s, sigma, x, y)));
  }
  o.detail << "max abs error " << worst << " over 50 skeletons";
  o.require(worst <= 1e-6, "max abs error <= 1e-6");
}

// Wraparound puts a seam on the frame border. The interior excludes every
// pixel whose averaging window can reach the seam or the content that wraps.
void flow_translation(Outcome& o) {
  const int margin = FlowConfig{}.window_size / 2 + 3;
  std::mt19937 rng(31);
  double worst = 0.0;
  std::string worst_shift;
  for (int dx : {-3, -2, -1, 1, 2, 3})
    for (int dy : {-3, -2, -1, 1, 2, 3}) {
      double epe = 0.0;
      for (int i = 0; i < 10; ++i) {
        const Plane a = testing::periodic_texture(rng, 64, 64);
        epe += testing::mean_endpoint_error(estimate_flow(a, testing::roll(a, dx, dy)), dx, dy, margin) / 10.0;
      }
      if (epe > worst) {
        worst = epe;
        worst_shift = "(" + std::to_string(dx) + "," + std::to_string(dy) + ")";
      }
    }
  o.detail << "worst interior mean endpoint error " << worst << " px at shift " << worst_shift << ", margin "
           << margin;
  o.require(worst < 0.5, "mean endpoint error < 0.5 px for every shift");
}

void gradient_routing(Outcome& o) {
  NetConfig n;
  n.dc_widths = {4, 4, 8, 8};
  n.embedding_dim = 8;
  n.dg_channels = {4, 8};
  n.dg_res_blocks = 1;
  n.ac_widths = {4, 4, 8, 8};
  n.num_actions = 3;
  n.input_channels = 6;
  n.frame_size = 16;
  n.sequence_length = 2;
  DomainGenerator<double> dg(n, 1);
  NetConfig ndc = n;
  ndc.input_channels = 3;
  const DomainClassifier<double> dc = freeze_copy(DomainClassifier<double>(ndc, 2));
  const ActionClassifier<double> acf = freeze_copy(ActionClassifier<double>(n, 3));
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Tensor<double> clips(Shape{2, 2, 6, 16, 16});
  for (auto& v : clips.storage()) v = u(rng);
  const std::vector<int> labels{1, 2};
  const std::vector<Index> dc_rows{0, 1, 2, 3};
  LossWeights w;
  w.lambda_d = 1e-2;
  SinkhornConfig sk;
  sk.max_iterations = 2000;
  sk.tolerance = 1e-12;

  joint_losses<double>(dg, dc, acf, nullptr, clips, labels, dc_rows, w, sk).dg_objective.backward();
  int touched = 0;
  for (const auto& p : dc.params().params()) touched += p.var.has_grad();
  for (const auto& p : acf.params().params()) touched += p.var.has_grad();
  o.require(touched == 0, "frozen DC and AC_f receive no gradient");

  const std::function<Var<double>()> objective = [&] {
    return joint_losses<double>(dg, dc, acf, nullptr, clips, labels, dc_rows, w, sk).dg_objective;
  };
  // Biases ahead of instance norm have exactly zero gradient, so the step is
  // sized to keep central-difference roundoff well under the 1e-6 floor.
  double worst = 0.0;
  int checked = 0;
  for (std::size_t i = 0; i < dg.params().size(); ++i) {
    const auto r = testing::grad_check(objective, dg.params().var(static_cast<Index>(i)), 3, 1e-5, 1e-6);
    worst = std::max(worst, r.max_rel_error);
    checked += r.checked;
  }
  o.detail << "frozen params with gradient " << touched << ", " << checked << " DG coordinates, worst rel error "
           << worst;
  o.require(checked > 0 && worst <= 1e-3, "DG finite differences within 1e-3");
}

void loss_algebra(Outcome& o) {
  LossReport parts;
  parts.class_term = 1;
  parts.cycle = 2;
  parts.novelty = 3;
  parts.diversity = 4;
  const double obj = dg_objective(parts, LossWeights{});
  const double t1 = ac_task_loss({1.0}, {3.0}, 0.5);
  const double t4 = ac_task_loss({0.5, 0.5, 0.5, 0.5}, {0.5, 0.5, 0.5, 0.5}, 0.5);
  o.require(obj == 14.0, "dg_objective worked example is 14");
  o.require(t1 == 2.0, "ac_task_loss single modality example is 2");
  o.require(t4 == 2.0, "ac_task_loss four modality example is 2");

  SinkhornConfig sk;
  sk.max_iterations = 2000;
  sk.tolerance = 1e-10;
  std::mt19937_64 rng(9);
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<Var<double>> nov;
    for (int k = 0; k < 4; ++k) nov.emplace_back(testing::random_tensor(rng, {4, 6}));
    double unordered = 0.0;
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t l = k + 1; l < 4; ++l) unordered += sinkhorn_distance(nov[k], nov[l], sk).item();
    worst = std::max(worst, std::abs(diversity_loss(nov, sk).item() - 2.0 * unordered));
  }
  o.detail << "dg_objective " << obj << ", ac_task " << t1 << " and " << t4 << ", diversity vs 2x unordered sum "
           << worst;
  o.require(worst <= 1e-6, "diversity equals twice the unordered pair sum");
}

void freeze_and_determinism(Outcome& o) {
  const TrainConfig cfg = desk_config({{"joint_epochs", "5"}});
  const TrainingData data = desk_data(cfg);
  const DC dc = desk_dc(cfg, data);
  const AC ac = desk_ac(cfg, data);
  const std::uint64_t dc_hash = dc.hash(), ac_hash = ac.hash();
  const fs::path root = fresh_dir(cache_root() / "c6");
  const JointResult a = joint_train(cfg, data, &dc, &ac, root / "a", quiet());
  const JointResult b = joint_train(cfg, data, &dc, &ac, root / "b", quiet());
  int constant = 0;
  for (const JointResult* r : {&a, &b})
    for (const auto& e : r->epochs) constant += e.dc_hash == dc_hash && e.acf_hash == ac_hash;
  o.require(a.complete && b.complete && a.epochs.size() == 5 && b.epochs.size() == 5, "both runs finish 5 epochs");
  o.require(constant == 10, "frozen hashes constant in every epoch");
  o.require(load_checkpoint<DC>(root / "a" / "frozen" / "dc").hash() == dc_hash, "saved frozen DC unchanged");
  o.require(dc.hash() == dc_hash && ac.hash() == ac_hash, "caller's models unchanged");
  const bool metrics = same_bytes(root / "a" / "metrics.csv", root / "b" / "metrics.csv");
  const bool epochs = same_bytes(root / "a" / "epoch_summary.csv", root / "b" / "epoch_summary.csv");
  o.require(metrics && epochs, "metrics CSVs byte-identical");
  o.detail << constant << "/10 epochs with constant frozen hashes, metrics CSVs "
           << (metrics && epochs ? "identical" : "differ") << " (" << csv_data_rows(root / "a" / "metrics.csv")
           << " steps)";
}

void sweep_shape(Outcome& o) {
  const fs::path root = fresh_dir(cache_root() / "c7");
  const TrainConfig cfg = resolve_config(
      {{"frame_size", "16"}, {"sequence_length", "8"}, {"toy_actions", "3"}, {"toy_videos_per_action", "3"},
       {"toy_frames", "90"}, {"dc_widths", "4,4,8,8"}, {"dg_channels", "4,8"}, {"dg_res_blocks", "1"},
       {"ac_widths", "4,8,8,8"}, {"dc_batch_size", "8"}, {"batch_size", "2"}, {"steps_per_epoch", "2"},
       {"dc_epochs", "1"}, {"ac_epochs", "1"}, {"joint_epochs", "1"}, {"heatmap_sigma", "1.5"},
       {"sweep_seeds", "0"}});
  const DatasetIndex idx = make_toy_dataset(cfg.toy, root / "toy", cfg.extract);
  const TrainingData data = prepare_training_data(std::make_shared<FrameStore>(idx), cfg);
  const DC dc = pretrain_domain_classifier(cfg, data, root / "sweep", quiet()).model;
  const SweepTable t = sweep_combinations(cfg, data, dc, root / "sweep", quiet());
  const auto rows = read_csv_rows(root / "sweep" / "sweep_table.csv");
  const auto canon = canonical_combos();
  bool names = rows.size() == canon.size();
  int singles = 0, singles_zero = 0, multi_nonzero = 0, failed = 0;
  for (std::size_t i = 0; names && i < rows.size(); ++i) {
    names = rows[i].at(1) == combo_name(canon[i]);
    failed += t.rows[i].failed();
    if (canon[i].size() == 1) {
      ++singles;
      bool zero = std::stod(rows[i].at(10)) == 0.0;
      for (const auto& r : t.rows[i].runs) zero = zero && r.max_abs_diversity == 0.0;
      singles_zero += zero;
    } else {
      multi_nonzero += std::stod(rows[i].at(10)) > 0.0;
    }
  }
  o.detail << rows.size() << " rows, " << singles_zero << "/" << singles << " singleton rows with zero diversity, "
           << multi_nonzero << "/11 multi-modality rows with nonzero diversity";
  o.require(t.rows.size() == 15 && rows.size() == 15 && names, "15 rows in canonical order");
  o.require(failed == 0, "no failed cells");
  o.require(singles == 4 && singles_zero == 4, "singleton rows carry zero diversity");
  o.require(multi_nonzero == 11, "multi-modality rows carry diversity");

  // The desk-scale sweep table, when present, must have the same shape.
  const fs::path desk = cache_root() / "sweep" / "sweep_table.csv";
  if (fs::exists(desk)) {
    int desk_singles_zero = 0;
    const auto drows = read_csv_rows(desk);
    for (std::size_t i = 0; i < drows.size() && i < canon.size(); ++i)
      desk_singles_zero += canon[i].size() == 1 && std::stod(drows[i].at(10)) == 0.0;
    o.detail << "; desk table " << drows.size() << " rows, " << desk_singles_zero << "/4 zero-diversity singletons";
    o.require(drows.size() == 15 && desk_singles_zero == 4, "desk sweep table shape");
  }
}

void directional_claim(Outcome& o) {
  const auto t0 = std::chrono::steady_clock::now();
  const TrainConfig cfg = desk_config();
  const TrainingData data = desk_data(cfg);
  const DC dc = desk_dc(cfg, data);
  const fs::path out = cache_root() / "sweep";
  for (const auto& combo : canonical_combos())
    for (auto seed : cfg.sweep_seeds) drop_stale_cell(cfg, combo, seed, sweep_cell_dir(out, combo, seed));
  const SweepTable t = sweep_combinations(cfg, data, dc, out, &std::cout);
  int at_least = 0, failed = 0;
  double gain = 0.0;
  for (const auto& row : t.rows) {
    failed += row.failed();
    const double src = median_of(row, [](const SweepRun& r) { return r.source_balanced; });
    const double nov = median_of(row, [](const SweepRun& r) { return r.novel_balanced; });
    at_least += nov >= src;
    gain += (nov - src) / static_cast<double>(t.rows.size());
  }
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
  o.detail << at_least << "/15 combos with median novel >= median source, mean gain " << gain << ", " << failed
           << " failed rows, " << minutes << " min this call";
  o.require(failed == 0, "no failed rows");
  o.require(at_least >= 10, "at least 10 of 15 combinations");
  o.require(gain >= 0.0, "mean improvement >= 0");
}

void novelty_dynamics(Outcome& o) {
  const TrainConfig cfg = desk_config();
  const TrainingData data = desk_data(cfg);
  const DC dc = desk_dc(cfg, data);
  const fs::path out = cache_root() / "sweep";
  const Combo all = all_modalities();
  int rising = 0, ok = 0;
  for (auto seed : cfg.sweep_seeds) {
    const fs::path dir = sweep_cell_dir(out, all, seed);
    drop_stale_cell(cfg, all, seed, dir);
    const SweepRun r = run_sweep_cell(cfg, data, dc, all, seed, dir);
    ok += r.ok;
    rising += r.ok && r.novelty_last_epoch > r.novelty_step0;
    o.detail << (seed ? ", " : "") << "seed " << seed << " " << r.novelty_step0 << " -> " << r.novelty_last_epoch;
  }
  o.detail << "; " << rising << "/5 rising";
  o.require(ok == 5, "every seed trained");
  o.require(rising >= 4, "novelty rises in at least 4 of 5 seeds");
}

void checkpoint_round_trip(Outcome& o) {
  const TrainConfig cfg = desk_config({{"joint_epochs", "5"}});
  const TrainingData data = desk_data(cfg);
  const DC dc = desk_dc(cfg, data);
  const AC ac = desk_ac(cfg, data);
  const fs::path root = fresh_dir(cache_root() / "c10");
  joint_train(cfg, data, &dc, &ac, root / "whole", quiet());
  const JointResult part = joint_train(cfg, data, &dc, &ac, root / "split", quiet(), {false, 2});
  // Everything after the interruption comes from disk.
  const JointResult rest = joint_train(cfg, data, nullptr, nullptr, root / "split", quiet(), {true, -1});
  o.require(!part.complete && part.epochs_done == 2, "interrupted after 2 epochs");
  o.require(rest.complete && rest.epochs.size() == 3, "resumed run finishes the remaining 3 epochs");
  int same = 0;
  for (const char* f : {"metrics.csv", "epoch_summary.csv", "dg/params.bin", "ac/params.bin"})
    same += same_bytes(root / "whole" / f, root / "split" / f);
  o.detail << same << "/4 artifacts byte-identical (metrics, epoch summary, DG, AC)";
  o.require(same == 4, "resumed run matches the uninterrupted run");
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<void(Outcome&)>>> criteria{
      {1, {"sinkhorn vs exact OT", sinkhorn_vs_exact}},
      {2, {"heatmap exactness", heatmap_exactness}},
      {3, {"flow translation", flow_translation}},
      {4, {"gradient routing", gradient_routing}},
      {5, {"loss algebra", loss_algebra}},
      {6, {"freeze and determinism", freeze_and_determinism}},
      {7, {"sweep shape", sweep_shape}},
      {8, {"desk-scale directional claim", directional_claim}},
      {9, {"novelty dynamics", novelty_dynamics}},
      {10, {"checkpoint round trip", checkpoint_round_trip}},
  };
  std::vector<int> picked;
  for (int i = 1; i < argc; ++i) picked.push_back(std::atoi(argv[i]));
  if (picked.empty())
    for (const auto& [n, c] : criteria) picked.push_back(n);
  int failures = 0;
  for (int n : picked) {
    const auto it = criteria.find(n);
    if (it == criteria.end()) {
      std::cerr << "unknown criterion " << n << "\n";
      return 2;
    }
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      it->second.second(o);
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [error: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << "criterion " << n << ": " << (o.pass ? "PASS" : "FAIL") << " " << it->second.first << ": "
              << o.detail.str() << " (" << secs << " s)" << std::endl;
    failures += !o.pass;
  }
  return failures ? 1 : 0;
}
