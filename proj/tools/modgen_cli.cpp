#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "modgen/checkpoint.hpp"
#include "modgen/config.hpp"
#include "modgen/evaluation.hpp"
#include "modgen/extraction.hpp"
#include "modgen/sweep.hpp"
#include "modgen/toy.hpp"
#include "modgen/training.hpp"
#include "plots.hpp"

namespace fs = std::filesystem;
using namespace modgen;

namespace {

constexpr int kExitOk = 0, kExitConfig = 2, kExitData = 3, kExitNumerical = 4;
constexpr const char* kOutRootEnv = "MODGEN_OUT_ROOT";

struct Options {
  std::string config_file;
  std::vector<std::string> sets;
  std::string out, root, dc, ac, dg;
  bool resume = false, plot = false;
  int jobs = 1;
  std::vector<std::string> argv;
};

TrainConfig effective_config(const Options& o) {
  Assignments a;
  if (!o.config_file.empty()) a = read_config_file(o.config_file);
  for (const auto& s : o.sets) a.push_back(parse_assignment(s));
  return resolve_config(a);
}

fs::path out_dir(const Options& o, const std::string& command) {
  if (!o.out.empty()) return o.out;
  const char* env = std::getenv(kOutRootEnv);
  return fs::path(env && *env ? env : "runs") / command;
}

fs::path need(const std::string& value, const std::string& flag) {
  if (value.empty()) throw ConfigError(flag + " is required");
  return value;
}

// Effective config plus the invocation, so the run can be repeated exactly.
void write_run_manifest(const fs::path& dir, const std::string& command, const Options& o, const TrainConfig& cfg,
                        Json extra = Json::object()) {
  write_text_file(dir / "config.txt", config_to_text(cfg));
  Json m = {{"command", command},
            {"argv", o.argv},
            {"config", config_to_map(cfg)},
            {"dataset_root", o.root},
            {"extra", std::move(extra)}};
  for (const auto& [key, value] : std::vector<std::pair<std::string, std::string>>{
           {"dc_checkpoint", o.dc}, {"ac_checkpoint", o.ac}, {"dg_checkpoint", o.dg}})
    if (!value.empty()) m[key] = value;
  write_json(dir / "manifest.json", m);
}

TrainingData load_data(const Options& o, const TrainConfig& cfg) {
  auto store = std::make_shared<FrameStore>(scan_dataset(need(o.root, "--root")));
  return prepare_training_data(store, cfg);
}

void plot_csv_columns(const fs::path& csv, const std::string& title, const fs::path& png) {
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  const auto names = config_detail::split(header, ',');
  const auto rows = read_csv_rows(csv);
  std::vector<plots::Series> series;
  for (std::size_t c = 1; c < names.size(); ++c) {
    plots::Series s{names[c], {}};
    for (const auto& r : rows) s.y.push_back(c < r.size() ? std::strtod(r[c].c_str(), nullptr) : std::nan(""));
    series.push_back(std::move(s));
  }
  plots::line_panels(series, title, png);
}

void write_eval_report(const EvalReport& r, const std::vector<std::string>& action_names, const fs::path& dir) {
  CsvWriter csv(dir / "eval_report.csv", "class,name,truth_count,recall", false);
  for (std::size_t c = 0; c < r.per_class_recall.size(); ++c) {
    Index n = 0;
    for (Index v : r.confusion[c]) n += v;
    csv.row({std::to_string(c), c < action_names.size() ? action_names[c] : "", std::to_string(n),
             fmt_metric(r.per_class_recall[c])});
  }
  csv.row({"balanced", "", std::to_string(r.n_samples), fmt_metric(r.balanced_accuracy)});
  csv.row({"unbalanced", "", std::to_string(r.n_samples), fmt_metric(r.unbalanced_accuracy)});
  write_json(dir / "eval.json", {{"combo", combo_name(r.combo)},
                                 {"domain", r.domain_tag},
                                 {"balanced_accuracy", r.balanced_accuracy},
                                 {"unbalanced_accuracy", r.unbalanced_accuracy},
                                 {"n_samples", r.n_samples},
                                 {"per_class_recall", r.per_class_recall},
                                 {"confusion", r.confusion}});
}

int cmd_make_toy(const Options& o) {
  const TrainConfig cfg = effective_config(o);
  const fs::path root = need(o.out, "--out");
  const DatasetIndex idx = make_toy_dataset(cfg.toy, root, cfg.extract);
  write_run_manifest(root, "make-toy", o, cfg, {{"videos", idx.items.size()}});
  std::cout << "make-toy wrote " << idx.items.size() << " videos to " << root.string() << "\n";
  return kExitOk;
}

int cmd_extract(const Options& o) {
  const TrainConfig cfg = effective_config(o);
  const DatasetIndex idx = extract_dataset(need(o.root, "--root"), cfg.extract);
  std::cout << "extract processed " << idx.items.size() << " videos under " << o.root << "\n";
  return kExitOk;
}

int cmd_pretrain_dc(const Options& o) {
  const TrainConfig cfg = effective_config(o);
  const fs::path out = out_dir(o, "pretrain-dc");
  const TrainingData data = load_data(o, cfg);
  write_run_manifest(out, "pretrain-dc", o, cfg);
  const DCResult r = pretrain_domain_classifier(cfg, data, out, &std::cout);
  write_run_manifest(out, "pretrain-dc", o, cfg, {{"holdout_accuracy", r.holdout_accuracy}, {"steps", r.steps}});
  return kExitOk;
}

int cmd_pretrain_ac(const Options& o) {
  const TrainConfig cfg = effective_config(o);
  const fs::path out = out_dir(o, "pretrain-ac");
  const TrainingData data = load_data(o, cfg);
  write_run_manifest(out, "pretrain-ac", o, cfg);
  const ACResult r = pretrain_action_classifier(cfg, data, out, &std::cout);
  write_run_manifest(out, "pretrain-ac", o, cfg,
                     {{"holdout_balanced_accuracy", r.holdout.n_samples ? r.holdout.balanced_accuracy : 0.0},
                      {"steps", r.steps}});
  return kExitOk;
}

// Joint phase. Without --dc/--ac the missing classifiers are pretrained into
// the run directory first.
int cmd_train(const Options& o) {
  const TrainConfig cfg = effective_config(o);
  const fs::path out = out_dir(o, "train");
  const TrainingData data = load_data(o, cfg);
  write_run_manifest(out, "train", o, cfg);
  JointOptions opts;
  opts.resume = o.resume;
  JointResult r;
  if (o.resume) {
    r = joint_train(cfg, data, nullptr, nullptr, out, &std::cout, opts);
  } else {
    const DC dc = o.dc.empty() ? pretrain_domain_classifier(cfg, data, out, &std::cout).model
                               : load_checkpoint<DC>(o.dc, nullptr, cfg.desk_scale);
    const AC ac = o.ac.empty() ? pretrain_action_classifier(cfg, data, out, &std::cout).model
                               : load_action_classifier(o.ac, cfg.combo, cfg.desk_scale);
    r = joint_train(cfg, data, &dc, &ac, out, &std::cout, opts);
  }
  const DatasetIndex eval = data.store->index().filter(cfg.eval_domain);
  Json extra = {{"epochs_done", r.epochs_done}};
  if (!eval.items.empty()) {
    const EvalReport rep =
        evaluate_model(r.ac, *data.store, eval, cfg.combo, domain_name(cfg.eval_domain), cfg.chunk_length);
    extra["eval_balanced_accuracy"] = rep.balanced_accuracy;
    std::cout << "train " << domain_name(cfg.eval_domain) << " balanced accuracy " << fmt_metric(rep.balanced_accuracy)
              << "\n";
  }
  write_run_manifest(out, "train", o, cfg, extra);
  return kExitOk;
}

int cmd_eval(const Options& o) {
  const TrainConfig cfg = effective_config(o);
  const fs::path out = out_dir(o, "eval");
  const fs::path ck = need(o.ac, "--ac");
  const AC ac = load_action_classifier(ck, cfg.combo, cfg.desk_scale);
  const auto store = std::make_shared<FrameStore>(scan_dataset(need(o.root, "--root")));
  const DatasetIndex subset = store->index().filter(cfg.eval_domain);
  const EvalReport r = evaluate_model(ac, *store, subset, cfg.combo, domain_name(cfg.eval_domain), cfg.chunk_length);
  write_run_manifest(out, "eval", o, cfg, {{"balanced_accuracy", r.balanced_accuracy}});
  write_eval_report(r, store->index().action_names, out);
  std::cout << "eval " << combo_name(cfg.combo) << " on " << r.domain_tag << ": balanced "
            << fmt_metric(r.balanced_accuracy) << " unbalanced " << fmt_metric(r.unbalanced_accuracy) << " over "
            << r.n_samples << " videos\n";
  if (o.plot) {
    const fs::path run = ck.parent_path();
    for (const char* name : {"metrics.csv", "ac_metrics.csv", "dc_metrics.csv"})
      if (fs::exists(run / name)) {
        const fs::path png = out / (fs::path(name).stem().string() + ".png");
        plot_csv_columns(run / name, (run / name).string(), png);
        std::cout << "plot " << png.string() << "\n";
      }
  }
  return kExitOk;
}

int cmd_sweep(const Options& o) {
  const TrainConfig cfg = effective_config(o);
  const fs::path out = out_dir(o, "sweep");
  const TrainingData data = load_data(o, cfg);
  write_run_manifest(out, "sweep", o, cfg);
  DC dc;
  if (!o.dc.empty()) {
    dc = load_checkpoint<DC>(o.dc, nullptr, cfg.desk_scale);
  } else if (fs::exists(out / "dc" / "manifest.json")) {
    dc = load_checkpoint<DC>(out / "dc", nullptr, cfg.desk_scale);
  } else {
    dc = pretrain_domain_classifier(cfg, data, out, &std::cout).model;
  }
  SweepOptions so;
  so.jobs = o.jobs;
  const SweepTable t = sweep_combinations(cfg, data, dc, out, &std::cout, so);
  Index failed = 0;
  for (const auto& row : t.rows) failed += row.failed();
  std::cout << "sweep wrote " << t.rows.size() << " rows to " << (out / "sweep_table.csv").string() << " ("
            << failed << " failed)\n";
  if (o.plot) {
    std::vector<std::string> labels;
    plots::Series src{"source-only", {}}, nov{"with-novel", {}};
    for (const auto& row : t.rows) {
      labels.push_back(combo_name(row.combo));
      src.y.push_back(median_of(row, [](const SweepRun& r) { return r.source_balanced; }));
      nov.y.push_back(median_of(row, [](const SweepRun& r) { return r.novel_balanced; }));
    }
    plots::grouped_bars(labels, {src, nov}, "median balanced accuracy, " + std::string(domain_name(cfg.eval_domain)),
                        out / "sweep_bars.png");
    std::cout << "plot " << (out / "sweep_bars.png").string() << "\n";
  }
  return kExitOk;
}

int cmd_dump_embeddings(const Options& o) {
  const TrainConfig cfg = effective_config(o);
  const fs::path out = out_dir(o, "dump-embeddings");
  const DG dg = load_checkpoint<DG>(need(o.dg, "--dg"), nullptr, cfg.desk_scale);
  const auto store = std::make_shared<FrameStore>(scan_dataset(need(o.root, "--root")));
  const DatasetIndex subset = store->index().filter(cfg.train_domain);
  write_run_manifest(out, "dump-embeddings", o, cfg);
  dump_embeddings(dg, *store, subset, cfg.dump_frames_per_video, cfg.seed, out / "embeddings.csv");
  std::cout << "dump-embeddings wrote " << subset.items.size() * static_cast<std::size_t>(cfg.dump_frames_per_video) * 8
            << " rows to " << (out / "embeddings.csv").string() << "\n";
  return kExitOk;
}

int fail(int code, const char* kind, const std::string& what) {
  std::string line = what;
  for (char& c : line)
    if (c == '\n') c = ' ';
  std::cerr << "modgen: error[" << kind << "]: " << line << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  Options o;
  o.argv.assign(argv, argv + argc);
  CLI::App app{"Multimodal novel-domain generation for cross-domain activity recognition"};
  app.set_help_flag("-h,--help", "print this help and every config key");
  app.footer(config_help() + "\nEnvironment: " + std::string(kOutRootEnv) +
             " sets the default output root (default ./runs).");
  app.require_subcommand(1);

  auto common = [&o](CLI::App* c, bool with_out = true) {
    c->add_option("--config", o.config_file, "key = value config file");
    c->add_option("--set", o.sets, "key=value override, repeatable; wins over --config")->take_all();
    if (with_out) c->add_option("--out", o.out, "run directory");
  };
  auto* make_toy = app.add_subcommand("make-toy", "render the two-domain toy benchmark and extract its streams");
  common(make_toy);
  auto* extract = app.add_subcommand("extract", "derive heatmap, limb and flow streams from rgb + keypoints");
  common(extract, false);
  extract->add_option("--root", o.root, "dataset root")->required();
  auto* pre_dc = app.add_subcommand("pretrain-dc", "train the modality (domain) classifier");
  auto* pre_ac = app.add_subcommand("pretrain-ac", "train the action classifier on source modalities");
  auto* train = app.add_subcommand("train", "joint generator / classifier training");
  auto* eval = app.add_subcommand("eval", "balanced accuracy of an action classifier on the eval domain");
  auto* sweep = app.add_subcommand("sweep", "all 15 modality combinations, source-only vs with-novel");
  auto* dump = app.add_subcommand("dump-embeddings", "export generator bottleneck embeddings of sampled frames");
  for (auto* c : {make_toy, extract, pre_dc, pre_ac, train, eval, sweep, dump}) c->footer(config_help());
  for (auto* c : {pre_dc, pre_ac, train, eval, sweep, dump}) {
    common(c);
    c->add_option("--root", o.root, "dataset root")->required();
  }
  for (auto* c : {train, sweep}) c->add_option("--dc", o.dc, "pretrained domain classifier checkpoint");
  train->add_option("--ac", o.ac, "pretrained action classifier checkpoint");
  train->add_flag("--resume", o.resume, "continue from the newest epoch checkpoint in --out");
  eval->add_option("--ac", o.ac, "action classifier checkpoint")->required();
  dump->add_option("--dg", o.dg, "domain generator checkpoint")->required();
  for (auto* c : {eval, sweep}) c->add_flag("--plot", o.plot, "write PNG charts derived from the CSVs");
  sweep->add_option("--jobs", o.jobs, "sweep cells run in parallel")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(kExitConfig, "config", e.what());
  }

  try {
    if (*make_toy) return cmd_make_toy(o);
    if (*extract) return cmd_extract(o);
    if (*pre_dc) return cmd_pretrain_dc(o);
    if (*pre_ac) return cmd_pretrain_ac(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*sweep) return cmd_sweep(o);
    if (*dump) return cmd_dump_embeddings(o);
  } catch (const ConfigError& e) {
    return fail(kExitConfig, "config", e.what());
  } catch (const std::invalid_argument& e) {
    return fail(kExitConfig, "config", e.what());
  } catch (const DataError& e) {
    return fail(kExitData, "data", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(kExitData, "data", e.what());
  } catch (const NumericalError& e) {
    return fail(kExitNumerical, "numerical", e.what());
  } catch (const std::exception& e) {
    return fail(1, "internal", e.what());
  }
  return kExitOk;
}
