#include "appa/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <numeric>

#include "appa/rng.hpp"

namespace appa {

std::string to_string(ApMethod m) { return m == ApMethod::AllPoint ? "all_point" : "eleven_point"; }

ApMethod ap_method_from_string(const std::string& s) {
  if (s == "all_point") return ApMethod::AllPoint;
  if (s == "eleven_point") return ApMethod::ElevenPoint;
  fail(ErrorKind::Config, "unknown AP method '" + s + "'");
}

std::vector<bool> match_detections(std::span<const Detection> detections, std::span<const BoundingBox> truths,
                                   double iou_threshold) {
  std::vector<bool> labels(detections.size(), false);
  std::vector<char> used(truths.size(), 0);
  for (std::size_t d = 0; d < detections.size(); ++d) {
    int best = -1;
    double best_iou = iou_threshold;
    for (std::size_t t = 0; t < truths.size(); ++t) {
      if (used[t]) continue;
      const double v = iou(detections[d].box, truths[t]);
      if (v >= best_iou && (best < 0 || v > best_iou)) {
        best = static_cast<int>(t);
        best_iou = v;
      }
    }
    if (best >= 0) {
      used[best] = 1;
      labels[d] = true;
    }
  }
  return labels;
}

ApResult average_precision(std::span<const LabeledDetection> labeled, int n_truths, ApMethod method) {
  ApResult r;
  r.n_truths = n_truths;
  r.n_detections = static_cast<int>(labeled.size());
  std::vector<std::size_t> order(labeled.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return labeled[a].score > labeled[b].score; });

  // One PR point per block of tied scores.
  std::vector<int> new_tp;  // true positives entering at each point
  int tp = 0;
  int fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = labeled[order[i]].score;
    int block_tp = 0;
    for (; i < order.size() && labeled[order[i]].score == s; ++i) {
      if (labeled[order[i]].true_positive) {
        ++tp;
        ++block_tp;
      } else {
        ++fp;
      }
    }
    PRPoint p;
    p.recall = n_truths > 0 ? double(tp) / double(n_truths) : 0.0;
    p.precision = double(tp) / double(tp + fp);
    p.cutoff = s;
    r.curve.points.push_back(p);
    new_tp.push_back(block_tp);
  }
  if (n_truths <= 0) return r;

  const std::size_t n = r.curve.points.size();
  std::vector<double> envelope(n);
  double running = 0;
  for (std::size_t b = n; b-- > 0;) {
    running = std::max(running, r.curve.points[b].precision);
    envelope[b] = running;
  }
  if (method == ApMethod::AllPoint) {
    double sum = 0;
    for (std::size_t b = 0; b < n; ++b) {
      for (int k = 0; k < new_tp[b]; ++k) sum += envelope[b];
    }
    r.ap = sum / double(n_truths);
  } else {
    double sum = 0;
    for (int t = 0; t <= 10; ++t) {
      const double level = t / 10.0;
      double best = 0;
      for (const auto& p : r.curve.points) {
        if (p.recall >= level) best = std::max(best, p.precision);
      }
      sum += best;
    }
    r.ap = sum / 11.0;
  }
  return r;
}

void ApAccumulator::add(std::span<const Detection> detections, std::span<const BoundingBox> truths) {
  std::vector<Detection> sorted(detections.begin(), detections.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const Detection& a, const Detection& b) { return a.objectness > b.objectness; });
  const auto labels = match_detections(sorted, truths, match_iou_);
  for (std::size_t i = 0; i < sorted.size(); ++i) labeled_.push_back({sorted[i].objectness, labels[i]});
  n_truths_ += static_cast<int>(truths.size());
}

ApResult ApAccumulator::result(ApMethod method) const { return average_precision(labeled_, n_truths_, method); }

ApResult evaluate_ap(const DetectorAdapter& detector, std::span<const SceneImage> scenes, const Patch* patch,
                     const PlacementSpec& spec, const EvalOptions& options, const EvalCondition& condition) {
  ApAccumulator acc(options.match_iou);
  TransformParams params;
  params.angle_deg = condition.angle_deg;
  params.scale = condition.scale;
  params.brightness = condition.brightness;
  for (const auto& scene : scenes) {
    const auto truths = scene.boxes_of(options.target_class);
    std::vector<Detection> dets;
    if (patch && !truths.empty()) {
      const std::vector<TransformParams> per_box(truths.size(), params);
      const auto adv = apply_patch(scene.pixels, *patch, spec, truths, per_box, options.resampling);
      dets = detect(detector, adv.image, options.conf_threshold, options.nms_iou_threshold);
    } else {
      dets = detect(detector, scene.pixels, options.conf_threshold, options.nms_iou_threshold);
    }
    std::erase_if(dets, [&](const Detection& d) { return d.top_class() != options.target_class; });
    acc.add(dets, truths);
  }
  return acc.result(options.method);
}

double evaluate_clean_ap(const DetectorAdapter& detector, std::span<const SceneImage> scenes,
                         const EvalOptions& options) {
  return evaluate_ap(detector, scenes, nullptr, PlacementSpec{}, options).ap.value_or(0.0);
}

Patch noise_patch(int resolution, std::uint64_t seed) {
  if (resolution < 2) fail(ErrorKind::Invariant, "noise patch resolution must be at least 2");
  Rng rng(mix_seed(seed, 0x401));
  Patch p{Image(3, resolution, resolution), kNoiseRow};
  for (auto& v : p.pixels.data()) v = rng.uniform();
  return p;
}

const TransferCell* TransferMatrix::find(const std::string& proxy, const std::string& detector) const {
  for (const auto& c : cells) {
    if (c.proxy == proxy && c.detector == detector) return &c;
  }
  return nullptr;
}

TransferMatrix run_transfer_benchmark(const std::map<std::string, Patch>& patches,
                                      std::span<const NamedDetector> detectors, std::span<const SceneImage> scenes,
                                      const PlacementSpec& spec, const EvalOptions& options, std::uint64_t noise_seed,
                                      int noise_resolution) {
  if (detectors.empty()) fail(ErrorKind::Usage, "transfer benchmark needs at least one detector");
  TransferMatrix m;
  for (const auto& [proxy, patch] : patches) m.proxies.push_back(proxy);
  for (const auto& d : detectors) m.detectors.push_back(d.id);
  const Patch noise = noise_patch(noise_resolution, noise_seed);

  std::map<std::string, TransferCell> noise_cells;
  for (const auto& d : detectors) {
    TransferCell nc;
    nc.proxy = kNoiseRow;
    nc.detector = d.id;
    if (!d.adapter) {
      nc.available = false;
    } else {
      m.clean_ap[d.id] = evaluate_clean_ap(*d.adapter, scenes, options);
      const auto r = evaluate_ap(*d.adapter, scenes, &noise, spec, options);
      nc.ap = r.ap.value_or(0.0);
      nc.curve = r.curve;
      if (m.clean_ap[d.id] > 0) nc.relative_ap = nc.ap / m.clean_ap[d.id];
    }
    noise_cells[d.id] = nc;
  }
  for (const auto& [proxy, patch] : patches) {
    for (const auto& d : detectors) {
      TransferCell c;
      c.proxy = proxy;
      c.detector = d.id;
      c.white_box = proxy == d.id;
      if (!d.adapter) {
        c.available = false;
      } else {
        const auto r = evaluate_ap(*d.adapter, scenes, &patch, spec, options);
        c.ap = r.ap.value_or(0.0);
        c.curve = r.curve;
        if (m.clean_ap[d.id] > 0) c.relative_ap = c.ap / m.clean_ap[d.id];
      }
      m.cells.push_back(std::move(c));
    }
  }
  for (const auto& d : detectors) m.cells.push_back(noise_cells[d.id]);
  return m;
}

bool operator==(const ReportRow& a, const ReportRow& b) {
  return a.proxy == b.proxy && a.detector == b.detector && a.available == b.available && a.white_box == b.white_box &&
         a.clean_ap == b.clean_ap && a.noise_ap == b.noise_ap && a.patched_ap == b.patched_ap &&
         a.ap_drop == b.ap_drop && a.ap_drop_clean == b.ap_drop_clean && a.relative_ap == b.relative_ap;
}

bool operator==(const PRCurve& a, const PRCurve& b) {
  if (a.points.size() != b.points.size()) return false;
  for (std::size_t i = 0; i < a.points.size(); ++i) {
    const auto& p = a.points[i];
    const auto& q = b.points[i];
    if (p.recall != q.recall || p.precision != q.precision || p.cutoff != q.cutoff) return false;
  }
  return true;
}

BenchmarkReport make_report(const TransferMatrix& matrix, const std::string& config_hash,
                            const std::string& placement_mode) {
  BenchmarkReport r;
  r.config_hash = config_hash;
  r.placement_mode = placement_mode;
  r.proxies = matrix.proxies;
  r.detectors = matrix.detectors;
  r.clean_ap = matrix.clean_ap;
  for (const auto& c : matrix.cells) {
    if (c.proxy == kNoiseRow) {
      if (c.available) r.noise_ap[c.detector] = c.ap;
      r.pr_curves[c.proxy + "|" + c.detector] = c.curve;
    }
  }
  for (const auto& c : matrix.cells) {
    if (c.proxy == kNoiseRow) continue;
    ReportRow row;
    row.proxy = c.proxy;
    row.detector = c.detector;
    row.available = c.available;
    row.white_box = c.white_box;
    row.patched_ap = c.ap;
    if (c.available) {
      row.clean_ap = matrix.clean_ap.at(c.detector);
      row.noise_ap = r.noise_ap.at(c.detector);
    }
    r.rows.push_back(row);
    r.pr_curves[c.proxy + "|" + c.detector] = c.curve;
  }
  recompute_derived(r);
  return r;
}

namespace {

struct Derived {
  double drop, drop_clean, relative;
};

Derived derive(const ReportRow& row) {
  return {row.noise_ap - row.patched_ap, row.clean_ap - row.patched_ap,
          row.clean_ap > 0 ? row.patched_ap / row.clean_ap : 0.0};
}

}  // namespace

void recompute_derived(BenchmarkReport& report) {
  for (auto& row : report.rows) {
    if (!row.available) {
      row.ap_drop = row.ap_drop_clean = row.relative_ap = 0;
      continue;
    }
    const auto d = derive(row);
    row.ap_drop = d.drop;
    row.ap_drop_clean = d.drop_clean;
    row.relative_ap = d.relative;
  }
}

std::vector<std::string> derived_mismatches(const BenchmarkReport& report) {
  std::vector<std::string> out;
  for (const auto& row : report.rows) {
    if (!row.available) continue;
    const auto d = derive(row);
    if (std::abs(d.drop - row.ap_drop) > 1e-9 || std::abs(d.drop_clean - row.ap_drop_clean) > 1e-9 ||
        std::abs(d.relative - row.relative_ap) > 1e-9) {
      out.push_back(row.proxy + "|" + row.detector);
    }
  }
  return out;
}

std::string format_percent(double fraction) {
  if (!std::isfinite(fraction)) return "n/a";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", fraction * 100.0);
  return buf;
}

namespace {

const ReportRow* find_row(const BenchmarkReport& r, const std::string& proxy, const std::string& detector) {
  for (const auto& row : r.rows) {
    if (row.proxy == proxy && row.detector == detector) return &row;
  }
  return nullptr;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

}  // namespace

std::string matrix_csv(const BenchmarkReport& report) {
  std::ostringstream os;
  os << "proxy";
  for (const auto& d : report.detectors) os << ',' << d;
  os << '\n';
  for (const auto& p : report.proxies) {
    os << p;
    for (const auto& d : report.detectors) {
      const ReportRow* row = find_row(report, p, d);
      os << ',' << (row && row->available ? format_percent(row->patched_ap) : "n/a");
    }
    os << '\n';
  }
  os << kNoiseRow;
  for (const auto& d : report.detectors) {
    const auto it = report.noise_ap.find(d);
    os << ',' << (it != report.noise_ap.end() ? format_percent(it->second) : "n/a");
  }
  os << '\n';
  return os.str();
}

std::string render_report_table(const BenchmarkReport& report) {
  std::size_t w = 10;
  for (const auto& p : report.proxies) w = std::max(w, p.size() + 2);
  for (const auto& d : report.detectors) w = std::max(w, d.size() + 2);
  std::ostringstream os;
  os << "config " << report.config_hash << "  placement " << report.placement_mode << "  ap " << report.ap_method
     << "\n\n";
  os << "Patched AP (%), rows = proxy, columns = detector, * = white-box\n";
  os << pad("", w);
  for (const auto& d : report.detectors) os << pad(d, w);
  os << '\n';
  for (const auto& p : report.proxies) {
    os << pad(p, w);
    for (const auto& d : report.detectors) {
      const ReportRow* row = find_row(report, p, d);
      std::string cell = row && row->available ? format_percent(row->patched_ap) : "n/a";
      if (row && row->white_box) cell += "*";
      os << pad(cell, w);
    }
    os << '\n';
  }
  os << pad(kNoiseRow, w);
  for (const auto& d : report.detectors) {
    const auto it = report.noise_ap.find(d);
    os << pad(it != report.noise_ap.end() ? format_percent(it->second) : "n/a", w);
  }
  os << "\n\n";
  os << pad("proxy", w) << pad("detector", w) << pad("clean", 9) << pad("noise", 9) << pad("patched", 9)
     << pad("drop", 9) << pad("drop_cln", 9) << "rel_ap\n";
  for (const auto& row : report.rows) {
    os << pad(row.proxy, w) << pad(row.detector + (row.white_box ? "*" : ""), w);
    if (!row.available) {
      os << "unavailable\n";
      continue;
    }
    os << pad(format_percent(row.clean_ap), 9) << pad(format_percent(row.noise_ap), 9)
       << pad(format_percent(row.patched_ap), 9) << pad(format_percent(row.ap_drop), 9)
       << pad(format_percent(row.ap_drop_clean), 9) << format_percent(row.relative_ap) << '\n';
  }
  return os.str();
}

std::string pr_curve_csv(const PRCurve& curve) {
  std::ostringstream os;
  os << "recall,precision,cutoff\n";
  char buf[96];
  for (const auto& p : curve.points) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", p.recall, p.precision, p.cutoff);
    os << buf;
  }
  return os.str();
}

SweepTable run_dynamics_sweep(const Patch& patch, const DetectorAdapter& detector, std::span<const SceneImage> scenes,
                              const PlacementSpec& spec, const EvalOptions& options, std::span<const double> angles,
                              std::span<const double> scales, std::span<const double> brightness) {
  SweepTable t;
  t.angles.assign(angles.begin(), angles.end());
  t.scales.assign(scales.begin(), scales.end());
  t.brightness.assign(brightness.begin(), brightness.end());
  if (t.angles.empty()) t.angles = {0.0};
  if (t.scales.empty()) t.scales = {1.0};
  if (t.brightness.empty()) t.brightness = {0.0};
  for (double a : t.angles) {
    for (double s : t.scales) {
      if (!(s > 0.0)) fail(ErrorKind::Config, "sweep scale factors must be positive");
      for (double b : t.brightness) {
        const EvalCondition cond{a, s, b};
        t.cells.push_back({cond, evaluate_ap(detector, scenes, &patch, spec, options, cond).ap.value_or(0.0)});
      }
    }
  }
  return t;
}

}  // namespace appa
