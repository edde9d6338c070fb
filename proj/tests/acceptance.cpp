// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "appa/data_io.hpp"
#include "appa/detector.hpp"
#include "appa/evalbench.hpp"
#include "appa/losses.hpp"
#include "appa/optimizer.hpp"
#include "appa/placement.hpp"
#include "appa/synthetic.hpp"
#include "oracles.hpp"
#include "tempdir.hpp"

using namespace appa;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail << "first failure: " << what << "; ";
    pass = pass && ok;
  }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool rel_close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b)); }

// ---------------------------------------------------------------------------

void geometry(Outcome& o) {
  const auto t0 = Clock::now();
  o.require(center_on_target({10, 20, 30, 60}) == Point{20, 40}, "centre (10,20,30,60)");
  o.require(center_on_target({0, 0, 2, 2}) == Point{1, 1}, "centre (0,0,2,2)");
  o.require(center_on_target({5, 5, 5.5, 9}) == Point{5.25, 7}, "centre (5,5,5.5,9)");
  o.require(patch_size_on_target({0, 0, 40, 90}, 0.25) == PatchSize{30, 30}, "size 40x90 r_s=0.25");
  o.require(patch_size_on_target({2, 2, 19, 19}, 1.0) == PatchSize{17, 17}, "size square r_s=1");
  o.require(rel_close(patch_size_on_target({0, 0, 50, 20}, 0.1).first, 10, 1e-12), "size 50x20 r_s=0.1");
  o.require(center_outside_target({10, 20, 30, 60}, 2) == Point{20, 20}, "outside r_d=2");
  o.require(center_outside_target({0, 0, 4, 4}, 1) == Point{2, -2}, "outside (0,0,4,4)");
  o.require(center_outside_target({10, 20, 30, 60}, 4) == Point{20, 30}, "outside r_d=4");

  const Mask m = build_mask(100, 100, {50, 50}, 10);
  o.require(m.row0 == 45 && m.col0 == 45 && m.rows == 10 && m.cols == 10, "mask at (50,50)");
  const Mask corner = build_mask(100, 100, {0, 0}, 10);
  o.require(corner.rows == 5 && corner.cols == 5 && corner.area() == 25, "clipped mask at (0,0)");
  o.require(build_mask(100, 100, {-100, -100}, 10).empty(), "off-image mask");

  Rng rng(10000);
  int checked = 0;
  for (int i = 0; i < 10000; ++i) {
    const BoundingBox b = oracle::random_box(rng, 1000.0, 0.01);
    const double rs = 1.0 - rng.uniform();
    const double rd = rng.uniform(0.05, 20.0);
    const auto [w, h] = patch_size_on_target(b, rs);
    const auto [cx, cy] = center_on_target(b);
    const auto [ox, oy] = center_outside_target(b, rd);
    const double d = outside_distance(b, rd);
    bool ok = w == h;
    ok = ok && rel_close(w * h / (b.width() * b.height()), rs, 1e-9);
    ok = ok && rel_close(b.height() / d, rd, 1e-9);
    ok = ok && cx == (b.x1 + b.x2) / 2 && cy == (b.y1 + b.y2) / 2;
    ok = ok && ox == cx && std::abs(cy - oy - d) <= 1e-9 * std::max(1.0, d);
    // Mask footprint against a direct scan of a small image.
    const int side = 40;
    const Point c{rng.uniform(-10, side + 10), rng.uniform(-10, side + 10)};
    const double size = rng.uniform(0.3, 25);
    const Mask mk = build_mask(side, side, c, size);
    const int extent = std::max(1, static_cast<int>(std::floor(size + 0.5)));
    const int left = static_cast<int>(std::floor(c.first - size / 2 + 0.5));
    const int top = static_cast<int>(std::floor(c.second - size / 2 + 0.5));
    std::size_t count = 0;
    for (int r = 0; r < side; ++r) {
      for (int col = 0; col < side; ++col) {
        const bool inside = r >= top && r < top + extent && col >= left && col < left + extent;
        count += inside;
        ok = ok && inside == mk.contains(r, col);
      }
    }
    ok = ok && count == mk.area();
    if (!ok) {
      o.require(false, "random box " + std::to_string(i));
      break;
    }
    ++checked;
  }
  const double t = seconds_since(t0);
  o.require(t < 5.0, "runtime under 5 s");
  o.detail << checked << " random boxes, " << t << " s";
}

void loss_gradients(Outcome& o) {
  const auto t0 = Clock::now();
  Rng rng(50);
  const auto& colors = default_printable_colors();
  const double h = 1e-5;
  double worst_tv = 0;
  double worst_nps = 0;
  auto rel = [](double a, double b) {
    const double s = std::max(std::abs(a), std::abs(b));
    return s < 1e-12 ? 0.0 : std::abs(a - b) / s;
  };
  for (int t = 0; t < 50; ++t) {
    Image p(3, 8, 8);
    for (double& v : p.data()) v = rng.uniform();
    const Image gtv = tv_loss_grad(p);
    const Image gnps = nps_loss_grad(p, colors);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double v = p.data()[i];
      p.data()[i] = v + h;
      const double tv_hi = tv_loss(p);
      const double nps_hi = nps_loss(p, colors);
      p.data()[i] = v - h;
      const double tv_lo = tv_loss(p);
      const double nps_lo = nps_loss(p, colors);
      p.data()[i] = v;
      worst_tv = std::max(worst_tv, rel((tv_hi - tv_lo) / (2 * h), gtv.data()[i]));
      worst_nps = std::max(worst_nps, rel((nps_hi - nps_lo) / (2 * h), gnps.data()[i]));
    }
  }
  const double t = seconds_since(t0);
  o.require(worst_tv < 1e-4, "tv gradient");
  o.require(worst_nps < 1e-4, "nps gradient");
  o.require(t < 30.0, "runtime under 30 s");
  o.detail << "max rel err tv " << worst_tv << ", nps " << worst_nps << ", " << t << " s";
}

Detection scored(const BoundingBox& b, double s) {
  Detection d;
  d.box = b;
  d.objectness = s;
  return d;
}

void metric_oracles(Outcome& o) {
  Rng rng(3);
  int ap_mismatch = 0;
  int eleven_mismatch = 0;
  for (int t = 0; t < 500; ++t) {
    std::vector<BoundingBox> truths;
    const int nt = rng.uniform_int(0, 6);
    for (int i = 0; i < nt; ++i) truths.push_back(oracle::random_box(rng, 40.0, 4.0));
    std::vector<Detection> dets;
    const int nd = rng.uniform_int(0, 12);
    for (int i = 0; i < nd; ++i) {
      BoundingBox b = oracle::random_box(rng, 40.0, 4.0);
      if (!truths.empty() && rng.uniform() < 0.7) {
        const auto& g = truths[rng.below(truths.size())];
        const double j = rng.uniform(0, 3);
        const BoundingBox moved{g.x1 + rng.uniform(-j, j), g.y1 + rng.uniform(-j, j), g.x2 + rng.uniform(-j, j),
                                g.y2 + rng.uniform(-j, j)};
        b = is_valid_box(moved) ? moved : g;
      }
      dets.push_back(scored(b, std::round(rng.uniform() * 8) / 8));  // coarse scores force ties
    }
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
      return a.objectness > b.objectness;
    });
    std::vector<BoundingBox> boxes;
    for (const auto& d : dets) boxes.push_back(d.box);
    const auto tp = oracle::match(boxes, truths, 0.5);
    if (match_detections(dets, truths, 0.5) != tp) ++ap_mismatch;
    std::vector<LabeledDetection> labeled;
    std::vector<oracle::Labeled> ol;
    for (std::size_t i = 0; i < dets.size(); ++i) {
      labeled.push_back({dets[i].objectness, tp[i]});
      ol.push_back({dets[i].objectness, tp[i]});
    }
    if (average_precision(labeled, nt).ap != oracle::average_precision(ol, nt)) ++ap_mismatch;
    if (average_precision(labeled, nt, ApMethod::ElevenPoint).ap != oracle::average_precision(ol, nt, true)) {
      ++eleven_mismatch;
    }
  }
  int nms_mismatch = 0;
  for (int t = 0; t < 1000; ++t) {
    const int n = rng.uniform_int(0, 30);
    std::vector<BoundingBox> boxes;
    std::vector<double> scores;
    for (int i = 0; i < n; ++i) {
      boxes.push_back(oracle::random_box(rng, 60.0, 2.0));
      scores.push_back(std::round(rng.uniform() * 16) / 16);
    }
    const double thr = rng.uniform(0.1, 0.9);
    if (nms(boxes, scores, thr) != oracle::nms(boxes, scores, thr)) ++nms_mismatch;
  }
  o.require(ap_mismatch == 0, "AP against the cutoff oracle");
  o.require(eleven_mismatch == 0, "eleven-point AP against the oracle");
  o.require(nms_mismatch == 0, "NMS against the quadratic oracle");
  o.detail << "500 scenes: " << ap_mismatch << " AP mismatches, " << eleven_mismatch << " eleven-point; 1000 NMS sets: "
           << nms_mismatch << " mismatches";
}

void report_arithmetic(Outcome& o) {
  TransferMatrix m;
  m.proxies = {"yolov2"};
  m.detectors = {"yolov2"};
  m.clean_ap = {{"yolov2", 0.9419}};  // no clean AP in the fixture; the noise value stands in
  m.cells.push_back({"yolov2", "yolov2", true, true, 0.0633, std::nullopt, {}});
  m.cells.push_back({kNoiseRow, "yolov2", true, false, 0.9419, std::nullopt, {}});
  BenchmarkReport r = make_report(m, "fixture", "on_target");
  fixture::TempDir dir("appa_accept");
  save_report(r, dir / "report.json");
  r = load_report(dir / "report.json");
  const std::string drop = r.rows.empty() ? "" : format_percent(r.rows[0].ap_drop);
  const std::string table = render_report_table(r);
  o.require(drop == "87.86", "AP drop formats as 87.86");
  o.require(table.find("87.86") != std::string::npos, "table shows the drop");
  o.require(table.find("6.33*") != std::string::npos, "white-box cell marked");
  o.detail << "noise 94.19 - patched 6.33 -> drop " << drop;
}

// ---------------------------------------------------------------------------
// Toy end-to-end experiment shared by criteria 5 to 7.

struct Experiment {
  RunConfig config;
  std::vector<SceneImage> train;
  std::vector<SceneImage> test;
};

Experiment make_experiment() {
  Experiment e;
  e.config = parse_config_text("[hyper]\nepochs = 10\n");
  e.train = generate_synthetic_dataset(e.config.synthetic, e.config.synthetic_train_images, 1);
  e.test = generate_synthetic_dataset(e.config.synthetic, e.config.synthetic_test_images, 2);
  return e;
}

ToyDetector train_detector(const Experiment& e) {
  ToyTrainOptions opt;
  opt.epochs = e.config.detector_epochs;
  opt.min_clean_ap = 0.0;  // the bar is checked by the caller
  return train_toy_detector(e.train, e.config.seed, opt, {}, e.test);
}

struct AttackResult {
  Patch patch;
  double noise_ap = 0;
  double patched_ap = 0;
  bool pixels_in_range = true;
  std::uint64_t checksum_before = 0;
  std::uint64_t checksum_after = 0;
};

AttackResult attack(const Experiment& e, const DetectorAdapter& det, PlacementMode mode) {
  RunConfig cfg = e.config;
  cfg.placement.mode = mode;
  finalize_config(cfg);
  AttackResult r;
  r.checksum_before = det.weight_checksum();
  PatchTrainer trainer(cfg, det, e.train);
  trainer.on_step = [&r](const TrainState& s) {
    for (double v : s.patch.pixels.data()) r.pixels_in_range = r.pixels_in_range && v >= 0.0 && v <= 1.0;
  };
  trainer.on_epoch = [&](const TrainState& s) {
    std::printf("  %s epoch %d loss %.4f\n", to_string(mode).c_str(), s.epoch, s.history.back().total);
    std::fflush(stdout);
  };
  trainer.run();
  r.checksum_after = det.weight_checksum();
  r.patch = trainer.state().patch;
  const auto options = cfg.eval_options();
  const Patch noise = noise_patch(cfg.patch_resolution, cfg.seed);
  r.noise_ap = evaluate_ap(det, e.test, &noise, cfg.placement, options).ap.value_or(0.0);
  r.patched_ap = evaluate_ap(det, e.test, &r.patch, cfg.placement, options).ap.value_or(0.0);
  return r;
}

struct Shared {
  Experiment exp = make_experiment();
  std::optional<ToyDetector> detector;
  double clean_ap = 0;
  AttackResult on;
  AttackResult outside;
};

void end_to_end(Outcome& o, Shared& s) {
  const auto t0 = Clock::now();
  s.detector = train_detector(s.exp);
  s.clean_ap = evaluate_clean_ap(*s.detector, s.exp.test, s.exp.config.eval_options());
  std::printf("  detector clean AP %.4f (%.0f s)\n", s.clean_ap, seconds_since(t0));
  s.on = attack(s.exp, *s.detector, PlacementMode::OnTarget);
  s.outside = attack(s.exp, *s.detector, PlacementMode::OutsideTarget);
  const double drop_on = 100 * (s.on.noise_ap - s.on.patched_ap);
  const double drop_out = 100 * (s.outside.noise_ap - s.outside.patched_ap);
  o.require(s.clean_ap >= 0.85, "clean AP at least 0.85");
  o.require(s.exp.config.hyper.n_epochs <= 300, "at most 300 epochs");
  o.require(drop_on >= 40.0, "on-target drop at least 40 points");
  o.require(drop_out >= 15.0, "outside-target drop at least 15 points");
  o.detail << "clean " << format_percent(s.clean_ap) << ", on-target noise " << format_percent(s.on.noise_ap)
           << " patched " << format_percent(s.on.patched_ap) << " (drop " << drop_on << "), outside noise "
           << format_percent(s.outside.noise_ap) << " patched " << format_percent(s.outside.patched_ap) << " (drop "
           << drop_out << "), " << seconds_since(t0) << " s";
}

void invariants(Outcome& o, Shared& s) {
  if (!s.detector) {
    o.require(false, "no trained detector");
    return;
  }
  const auto t0 = Clock::now();
  o.require(s.on.checksum_before == s.on.checksum_after && s.outside.checksum_before == s.outside.checksum_after,
            "detector checksum unchanged by training");
  o.require(s.on.pixels_in_range && s.outside.pixels_in_range, "patch pixels in [0,1] after every step");

  // Resume on a short run: interrupt after k steps, restore from disk, finish.
  RunConfig cfg = s.exp.config;
  cfg.hyper.n_epochs = 2;
  finalize_config(cfg);
  const std::span<const SceneImage> subset(s.exp.train.data(), 96);
  PatchTrainer full(cfg, *s.detector, subset);
  full.run();
  fixture::TempDir dir("appa_accept");
  PatchTrainer head(cfg, *s.detector, subset);
  head.run(7);
  save_checkpoint(head.state(), dir / "k.ckpt");
  PatchTrainer tail(cfg, *s.detector, subset, resume(dir / "k.ckpt"));
  tail.run();
  const auto& a = full.state();
  const auto& b = tail.state();
  o.require(a.patch == b.patch && a.adam_m == b.adam_m && a.adam_v == b.adam_v && a.step == b.step &&
                a.rng == b.rng && a.history.size() == b.history.size(),
            "resumed run matches the uninterrupted run");

  // Full fixed-seed rerun: detector, patch, evaluation.
  const ToyDetector again = train_detector(s.exp);
  const AttackResult rerun = attack(s.exp, again, PlacementMode::OnTarget);
  const double diff = 100 * std::abs(rerun.patched_ap - s.on.patched_ap);
  o.require(diff <= 0.5, "rerun patched AP within 0.5 points");
  o.detail << "detector checksums " << (again.weight_checksum() == s.detector->weight_checksum() ? "equal" : "differ")
           << ", rerun patched AP " << format_percent(rerun.patched_ap) << " vs " << format_percent(s.on.patched_ap)
           << ", " << seconds_since(t0) << " s";
}

void sweep_identity(Outcome& o, Shared& s) {
  if (!s.detector) {
    o.require(false, "no trained detector");
    return;
  }
  const auto options = s.exp.config.eval_options();
  const PlacementSpec spec = s.exp.config.placement;
  const std::vector<double> angles{0, 15};
  const std::vector<double> scales{1.0, 1.2};
  const std::vector<double> bright{-0.1, 0.0};
  const auto table = run_dynamics_sweep(s.on.patch, *s.detector, s.exp.test, spec, options, angles, scales, bright);
  const double standard = evaluate_ap(*s.detector, s.exp.test, &s.on.patch, spec, options).ap.value_or(-1);
  int identity_cells = 0;
  bool equal = true;
  for (const auto& c : table.cells) {
    if (!c.condition.is_identity()) continue;
    ++identity_cells;
    equal = equal && c.ap == standard;
  }
  o.require(identity_cells == 1, "one identity cell");
  o.require(equal, "identity cell equals the standard patched AP");
  o.require(standard == s.on.patched_ap, "standard AP is stable across calls");
  o.detail << "identity cell " << format_percent(standard) << " over " << table.cells.size() << " cells";
}

}  // namespace

int main() {
  Shared shared;
  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria = {
      {"geometry exactness", geometry},
      {"loss gradient checks", loss_gradients},
      {"metric oracles", metric_oracles},
      {"report arithmetic", report_arithmetic},
      {"end-to-end toy attack", [&](Outcome& o) { end_to_end(o, shared); }},
      {"invariant suite", [&](Outcome& o) { invariants(o, shared); }},
      {"dynamics sweep identity", [&](Outcome& o) { sweep_identity(o, shared); }},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      criteria[i].second(o);
    } catch (const std::exception& e) {
      o.require(false, std::string("exception: ") + e.what());
    }
    failures += !o.pass;
    std::printf("%s %zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first.c_str(), o.detail.str().c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
