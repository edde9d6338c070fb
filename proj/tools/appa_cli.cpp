#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "appa/ablation.hpp"
#include "appa/config.hpp"
#include "appa/data_io.hpp"
#include "appa/detector.hpp"
#include "appa/evalbench.hpp"
#include "appa/optimizer.hpp"
#include "appa/synthetic.hpp"
#include "plot.hpp"

namespace fs = std::filesystem;
using namespace appa;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitConfig = 3;
constexpr int kExitData = 4;
constexpr int kExitNumeric = 5;

// Seeds of the generated train and test splits.
constexpr std::uint64_t kSyntheticTrainSeed = 1;
constexpr std::uint64_t kSyntheticTestSeed = 2;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Usage: return kExitUsage;
    case ErrorKind::Config: return kExitConfig;
    case ErrorKind::Data:
    case ErrorKind::Adapter: return kExitData;
    case ErrorKind::Numeric: return kExitNumeric;
    case ErrorKind::Invariant: return 1;
  }
  return 1;
}

struct CommonFlags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> detectors;
  std::string placement;
  std::optional<int> epochs;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "run config file");
  cmd->add_option("--seed", f.seed, "master seed (overrides run.seed)");
  cmd->add_option("--out", f.out, "output root (default $APPA_OUT_ROOT, else run.out_root)");
  cmd->add_option("--detector", f.detectors, "detector as [name=][plugin:]checkpoint; repeatable");
  cmd->add_option("--placement", f.placement, "on | outside")->check(CLI::IsMember({"on", "outside"}));
}

RunConfig load_config(const CommonFlags& f) {
  RunConfig cfg;
  if (!f.config.empty()) {
    cfg = parse_config(f.config);
  }
  if (f.seed) cfg.seed = *f.seed;
  if (f.epochs) cfg.hyper.n_epochs = *f.epochs;
  if (!f.placement.empty()) {
    cfg.placement.mode = f.placement == "on" ? PlacementMode::OnTarget : PlacementMode::OutsideTarget;
  }
  if (!f.out.empty()) {
    cfg.out_root = f.out;
  } else if (const char* env = std::getenv("APPA_OUT_ROOT"); env && *env) {
    cfg.out_root = env;
  }
  finalize_config(cfg);
  return cfg;
}

RunPaths prepare_run(const RunConfig& cfg) {
  const RunPaths paths = run_paths(cfg);
  fs::create_directories(paths.root);
  write_text_file(paths.config_file(), "# config_hash: " + cfg.config_hash + "\n" + canonical_config(cfg));
  return paths;
}

std::vector<SceneImage> load_split(const RunConfig& cfg, bool train) {
  const DatasetRef& ref = train ? cfg.train_data : cfg.test_data;
  if (ref.root.empty()) {
    const int n = train ? cfg.synthetic_train_images : cfg.synthetic_test_images;
    return generate_synthetic_dataset(cfg.synthetic, n, train ? kSyntheticTrainSeed : kSyntheticTestSeed);
  }
  auto scenes = load_dataset(ref);
  if (scenes.empty()) fail(ErrorKind::Data, "dataset " + ref.root + " holds no images");
  return scenes;
}

struct LoadedDetector {
  std::string name;
  std::string source;
  std::unique_ptr<DetectorAdapter> adapter;
  std::string error;
};

LoadedDetector load_detector_spec(const std::string& spec, const RunConfig& cfg) {
  LoadedDetector d;
  std::string rest = spec;
  if (const auto eq = rest.find('='); eq != std::string::npos) {
    d.name = rest.substr(0, eq);
    rest = rest.substr(eq + 1);
  }
  std::string plugin = cfg.detector_id;
  if (const auto colon = rest.find(':'); colon != std::string::npos && has_detector(rest.substr(0, colon))) {
    plugin = rest.substr(0, colon);
    rest = rest.substr(colon + 1);
  }
  d.source = rest;
  try {
    d.adapter = load_detector(plugin, rest);
    if (d.name.empty()) d.name = d.adapter->id();
  } catch (const Error& e) {
    d.error = e.what();
    if (d.name.empty()) d.name = fs::path(rest).stem().string();
  }
  return d;
}

std::vector<LoadedDetector> resolve_detectors(const CommonFlags& f, const RunConfig& cfg) {
  std::vector<std::string> specs = f.detectors;
  if (specs.empty() && !cfg.detector_checkpoint.empty()) specs.push_back(cfg.detector_checkpoint);
  std::vector<LoadedDetector> out;
  std::set<std::string> names;
  for (const auto& s : specs) {
    out.push_back(load_detector_spec(s, cfg));
    if (!names.insert(out.back().name).second) {
      fail(ErrorKind::Usage, "duplicate detector name '" + out.back().name + "'; use name=path to disambiguate");
    }
  }
  return out;
}

/// First detector, which must load.
LoadedDetector require_detector(const CommonFlags& f, const RunConfig& cfg) {
  auto all = resolve_detectors(f, cfg);
  if (all.empty()) fail(ErrorKind::Usage, "no detector given (--detector or detector.checkpoint)");
  if (!all.front().adapter) fail(ErrorKind::Adapter, all.front().error);
  return std::move(all.front());
}

void info(const std::string& msg) { std::cerr << msg << std::endl; }

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(digits);
  os << v;
  return os.str();
}

// ---------------------------------------------------------------------------

int cmd_gen_data(const CommonFlags& f) {
  const RunConfig cfg = load_config(f);
  const RunPaths paths = prepare_run(cfg);
  for (const bool train : {true, false}) {
    const fs::path dir = paths.root / "data" / (train ? "train" : "test");
    write_manifest_dataset(dir, load_split(cfg, train));
    std::cout << dir.string() << "\n";
  }
  return 0;
}

int cmd_train_detector(const CommonFlags& f, const std::string& name) {
  const RunConfig cfg = load_config(f);
  const RunPaths paths = prepare_run(cfg);
  const auto train = load_split(cfg, true);
  const auto test = load_split(cfg, false);
  ToyTrainOptions opt;
  opt.epochs = cfg.detector_epochs;
  opt.conf_threshold = cfg.hyper.conf_threshold;
  opt.nms_iou_threshold = cfg.hyper.iou_threshold;
  opt.eval_match_iou = cfg.eval_match_iou;
  opt.target_class = cfg.target_class;
  opt.on_epoch = [](int epoch, double loss, double ap) {
    info("epoch " + std::to_string(epoch) + " loss " + fmt(loss) + (ap >= 0 ? " val_ap " + fmt(ap) : ""));
  };
  ToyDetectorConfig dc;
  dc.input_size = cfg.synthetic.image_size;
  dc.classes = {cfg.target_class, cfg.synthetic.distractor_class};
  if (!cfg.train_data.root.empty() && cfg.train_data.input_size > 0) dc.input_size = cfg.train_data.input_size;
  ToyDetector det = train_toy_detector(train, cfg.seed, opt, dc, test);
  if (!name.empty()) det.set_id(name);
  const fs::path out = paths.root / "detector.bin";
  det.save(out);
  const double ap = evaluate_clean_ap(det, test, cfg.eval_options());
  std::cout << out.string() << "\nclean_ap " << fmt(ap) << "\n";
  return 0;
}

int cmd_train_patch(const CommonFlags& f, const std::string& resume_path, std::uint64_t max_steps) {
  const RunConfig cfg = load_config(f);
  const RunPaths paths = prepare_run(cfg);
  const LoadedDetector det = require_detector(f, cfg);
  const auto train = load_split(cfg, true);
  std::optional<TrainState> state;
  if (!resume_path.empty()) {
    const fs::path p = resume_path == "last" ? paths.checkpoints() / "last.ckpt" : fs::path(resume_path);
    state = resume(p);
    info("resuming at step " + std::to_string(state->step));
  }
  TrainOutputs outputs;
  outputs.run_dir = paths.root;
  outputs.max_steps = max_steps;
  outputs.on_epoch = [](const TrainState& s) {
    const auto& l = s.history.back();
    info("epoch " + std::to_string(s.epoch) + " step " + std::to_string(s.step) + " l_obj " + fmt(l.l_obj) +
         " l_tv " + fmt(l.l_tv) + " l_nps " + fmt(l.l_nps));
  };
  auto [patch, final_state] = train_patch(cfg, *det.adapter, train, outputs, std::move(state));
  patch.id = det.name;
  nlohmann::json extra;
  extra["steps"] = final_state.step;
  extra["epochs_completed"] = final_state.epoch;
  extra["finished"] = final_state.finished;
  extra["final_loss"] = final_state.history.empty() ? 0.0 : final_state.history.back().total;
  save_patch(paths, patch, cfg, extra);
  std::cout << paths.root.string() << "\n";
  return 0;
}

void write_pr_plot(const fs::path& path, const std::map<std::string, PRCurve>& curves, const std::string& title) {
  std::vector<plot::Series> series;
  for (const auto& [label, curve] : curves) {
    plot::Series s{label, {}, {}};
    for (const auto& p : curve.points) {
      s.x.push_back(p.recall);
      s.y.push_back(p.precision);
    }
    series.push_back(std::move(s));
  }
  plot::line_chart(path, series, 0, 1, 0, 1, title);
}

std::string safe_name(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
  }
  return s;
}

int cmd_evaluate(const CommonFlags& f, const std::string& patch_path) {
  const RunConfig cfg = load_config(f);
  const RunPaths paths = prepare_run(cfg);
  const LoadedDetector det = require_detector(f, cfg);
  const auto test = load_split(cfg, false);
  const auto opt = cfg.eval_options();
  const ApResult clean = evaluate_ap(*det.adapter, test, nullptr, cfg.placement, opt);
  const Patch noise = noise_patch(cfg.patch_resolution, cfg.seed);
  const ApResult noisy = evaluate_ap(*det.adapter, test, &noise, cfg.placement, opt);
  std::optional<ApResult> patched;
  if (!patch_path.empty()) {
    const Patch p = load_patch(patch_path);
    patched = evaluate_ap(*det.adapter, test, &p, cfg.placement, opt);
  }
  fs::create_directories(paths.reports());
  nlohmann::ordered_json j;
  j["config_hash"] = cfg.config_hash;
  j["detector"] = det.name;
  j["placement_mode"] = to_string(cfg.placement.mode);
  j["clean_ap"] = clean.ap.value_or(0.0);
  j["noise_ap"] = noisy.ap.value_or(0.0);
  std::map<std::string, PRCurve> curves{{"clean", clean.curve}, {"noise", noisy.curve}};
  if (patched) {
    j["patched_ap"] = patched->ap.value_or(0.0);
    j["ap_drop"] = noisy.ap.value_or(0.0) - patched->ap.value_or(0.0);
    curves["patched"] = patched->curve;
  }
  write_text_file(paths.reports() / "evaluate.json", j.dump(2) + "\n");
  for (const auto& [k, c] : curves) write_text_file(paths.reports() / ("pr_" + k + ".csv"), pr_curve_csv(c));
  write_pr_plot(paths.reports() / "evaluate_pr.png", curves, "PR " + det.name);
  std::cout << "clean_ap " << fmt(clean.ap.value_or(0.0)) << "\nnoise_ap " << fmt(noisy.ap.value_or(0.0)) << "\n";
  if (patched) std::cout << "patched_ap " << fmt(patched->ap.value_or(0.0)) << "\n";
  return 0;
}

int cmd_benchmark(const CommonFlags& f, const std::vector<std::string>& patch_paths) {
  const RunConfig cfg = load_config(f);
  auto detectors = resolve_detectors(f, cfg);
  if (detectors.empty()) fail(ErrorKind::Usage, "benchmark needs at least one --detector");
  if (patch_paths.empty()) fail(ErrorKind::Usage, "benchmark needs at least one --patch");
  const RunPaths paths = prepare_run(cfg);
  std::map<std::string, Patch> patches;
  for (const auto& p : patch_paths) {
    Patch patch = load_patch(p);
    if (patch.id.empty()) patch.id = fs::path(p).stem().string();
    if (!patches.emplace(patch.id, patch).second) fail(ErrorKind::Usage, "two patches share proxy id " + patch.id);
  }
  std::vector<NamedDetector> named;
  for (const auto& d : detectors) {
    if (!d.adapter) std::cerr << "warning: detector '" << d.name << "' unavailable: " << d.error << "\n";
    named.push_back({d.name, d.adapter.get()});
  }
  const auto test = load_split(cfg, false);
  const auto t0 = std::chrono::steady_clock::now();
  const TransferMatrix m =
      run_transfer_benchmark(patches, named, test, cfg.placement, cfg.eval_options(), cfg.seed, cfg.patch_resolution);
  BenchmarkReport report = make_report(m, cfg.config_hash, to_string(cfg.placement.mode));
  report.ap_method = to_string(cfg.ap_method);
  report.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const fs::path reports = paths.reports();
  fs::create_directories(reports / "pr");
  save_report(report, reports / "benchmark.json");
  write_text_file(reports / "matrix.csv", matrix_csv(report));
  for (const auto& [key, curve] : report.pr_curves) {
    write_text_file(reports / "pr" / (safe_name(key) + ".csv"), pr_curve_csv(curve));
  }
  std::map<std::string, PRCurve> white_box_curves;
  for (const auto& [key, curve] : report.pr_curves) {
    const auto bar = key.find('|');
    if (key.substr(0, bar) == key.substr(bar + 1) || key.substr(0, bar) == kNoiseRow) white_box_curves[key] = curve;
  }
  write_pr_plot(reports / "pr_curves.png", white_box_curves.empty() ? report.pr_curves : white_box_curves,
                "PR curves");
  std::vector<std::vector<double>> values;
  std::vector<std::vector<bool>> highlight;
  std::vector<std::string> rows = report.proxies;
  rows.push_back(kNoiseRow);
  for (const auto& p : rows) {
    values.emplace_back();
    highlight.emplace_back();
    for (const auto& d : report.detectors) {
      const TransferCell* c = m.find(p, d);
      values.back().push_back(c && c->available ? c->ap : std::nan(""));
      highlight.back().push_back(c && c->white_box);
    }
  }
  plot::heatmap(reports / "heatmap.png", values, highlight, rows, report.detectors, "Patched AP");
  std::cout << render_report_table(report);
  return 0;
}

int cmd_sweep(const CommonFlags& f, const std::string& patch_path) {
  if (patch_path.empty()) fail(ErrorKind::Usage, "sweep needs --patch");
  const RunConfig cfg = load_config(f);
  const RunPaths paths = prepare_run(cfg);
  const LoadedDetector det = require_detector(f, cfg);
  const Patch patch = load_patch(patch_path);
  const auto test = load_split(cfg, false);
  const SweepTable t = run_dynamics_sweep(patch, *det.adapter, test, cfg.placement, cfg.eval_options(),
                                          cfg.sweep_angles, cfg.sweep_scales, cfg.sweep_brightness);
  fs::create_directories(paths.reports());
  std::ostringstream csv;
  csv << "# config_hash: " << cfg.config_hash << "\nangle_deg,scale,brightness,ap\n";
  for (const auto& c : t.cells) {
    csv << c.condition.angle_deg << ',' << c.condition.scale << ',' << c.condition.brightness << ','
        << format_percent(c.ap) << '\n';
  }
  write_text_file(paths.reports() / "sweep.csv", csv.str());
  std::vector<plot::Series> series;
  for (double s : t.scales) {
    for (double b : t.brightness) {
      plot::Series ser{"S " + fmt(s, 2) + " B " + fmt(b, 2), {}, {}};
      for (const auto& c : t.cells) {
        if (c.condition.scale == s && c.condition.brightness == b) {
          ser.x.push_back(c.condition.angle_deg);
          ser.y.push_back(c.ap);
        }
      }
      series.push_back(std::move(ser));
    }
  }
  const auto [amin, amax] = std::minmax_element(t.angles.begin(), t.angles.end());
  plot::line_chart(paths.reports() / "sweep.png", series, *amin, *amax, 0, 1, "AP vs angle");
  std::cout << csv.str();
  return 0;
}

int cmd_report(const CommonFlags& f, const std::string& dir) {
  fs::path root = dir;
  if (root.empty()) root = run_paths(load_config(f)).reports();
  std::vector<fs::path> files;
  if (fs::is_regular_file(root)) {
    files.push_back(root);
  } else if (fs::is_directory(root)) {
    for (const auto& e : fs::directory_iterator(root)) {
      if (e.path().extension() != ".json") continue;
      try {
        if (nlohmann::json::parse(read_text_file(e.path())).value("schema", "") == kReportSchema) {
          files.push_back(e.path());
        }
      } catch (const nlohmann::json::exception&) {
      }
    }
  } else {
    fail(ErrorKind::Data, "report directory " + root.string() + " does not exist");
  }
  if (files.empty()) fail(ErrorKind::Data, "no raw benchmark reports in " + root.string());
  std::sort(files.begin(), files.end());
  for (const auto& file : files) {
    BenchmarkReport r = load_report(file);
    for (const auto& bad : derived_mismatches(r)) {
      std::cerr << "warning: " << file.filename().string() << ": derived values of " << bad
                << " disagree with raw cells; regenerated\n";
    }
    recompute_derived(r);
    const std::string table = render_report_table(r);
    fs::path out = file;
    out.replace_extension(".txt");
    write_text_file(out, table);
    std::cout << table;
  }
  return 0;
}

int cmd_ablation(const CommonFlags& f, const std::vector<int>& resolutions, std::uint64_t max_steps) {
  const RunConfig cfg = load_config(f);
  const RunPaths paths = prepare_run(cfg);
  const LoadedDetector det = require_detector(f, cfg);
  const auto train = load_split(cfg, true);
  const auto test = load_split(cfg, false);
  const auto rows = run_resolution_ablation(resolutions, cfg, *det.adapter, train, test, max_steps);
  fs::create_directories(paths.reports());
  std::ostringstream csv;
  csv << "# config_hash: " << cfg.config_hash << "\nresolution,clean_ap,noise_ap,patched_ap,ap_drop\n";
  std::vector<double> drops;
  for (const auto& r : rows) {
    csv << r.resolution << ',' << format_percent(r.clean_ap) << ',' << format_percent(r.noise_ap) << ','
        << format_percent(r.patched_ap) << ',' << format_percent(r.ap_drop) << '\n';
    drops.push_back(r.ap_drop);
  }
  write_text_file(paths.reports() / "ablation.csv", csv.str());
  plot::bar_chart(paths.reports() / "ablation.png", drops, "AP drop by resolution");
  std::cout << csv.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aerial adversarial patch toolkit"};
  app.require_subcommand(1);
  CommonFlags flags;
  std::string name, resume_path, patch_path, report_dir;
  std::vector<std::string> patch_paths;
  std::vector<int> resolutions = {20, 30, 40, 50};
  std::uint64_t max_steps = UINT64_MAX;

  auto* gen = app.add_subcommand("gen-data", "export the synthetic train/test splits as manifest datasets");
  add_common(gen, flags);
  auto* tdet = app.add_subcommand("train-detector", "train the built-in toy detector");
  add_common(tdet, flags);
  tdet->add_option("--name", name, "detector id stored in the checkpoint");
  auto* tpatch = app.add_subcommand("train-patch", "optimize an adversarial patch");
  add_common(tpatch, flags);
  tpatch->add_option("--resume", resume_path, "checkpoint to resume from, or 'last'");
  tpatch->add_option("--max-steps", max_steps, "stop after this many optimizer steps");
  tpatch->add_option("--epochs", flags.epochs, "override hyper.epochs");
  auto* eval = app.add_subcommand("evaluate", "clean, noise and patched AP on the test split");
  add_common(eval, flags);
  eval->add_option("--patch", patch_path, "patch.json or run directory");
  auto* bench = app.add_subcommand("benchmark", "transfer matrix of patches against detectors");
  add_common(bench, flags);
  bench->add_option("--patch", patch_paths, "patch.json or run directory; repeatable");
  auto* sweep = app.add_subcommand("sweep", "AP under rotation, scale and brightness changes");
  add_common(sweep, flags);
  sweep->add_option("--patch", patch_path, "patch.json or run directory");
  auto* report = app.add_subcommand("report", "render tables from raw benchmark JSON");
  add_common(report, flags);
  report->add_option("--dir", report_dir, "reports directory or a single JSON report");
  auto* abl = app.add_subcommand("ablation", "patch resolution ablation");
  add_common(abl, flags);
  abl->add_option("--resolutions", resolutions, "patch sides to try")->delimiter(',');
  abl->add_option("--max-steps", max_steps, "cap on optimizer steps per resolution");
  abl->add_option("--epochs", flags.epochs, "override hyper.epochs");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(flags);
    if (*tdet) return cmd_train_detector(flags, name);
    if (*tpatch) return cmd_train_patch(flags, resume_path, max_steps);
    if (*eval) return cmd_evaluate(flags, patch_path);
    if (*bench) return cmd_benchmark(flags, patch_paths);
    if (*sweep) return cmd_sweep(flags, patch_path);
    if (*report) return cmd_report(flags, report_dir);
    if (*abl) return cmd_ablation(flags, resolutions, max_steps);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitUsage;
}
