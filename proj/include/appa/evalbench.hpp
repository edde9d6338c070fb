#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "appa/core_types.hpp"
#include "appa/detector.hpp"
#include "appa/placement.hpp"
#include "appa/transforms.hpp"

namespace appa {

// ---------------------------------------------------------------------------
// Metrics

enum class ApMethod { AllPoint, ElevenPoint };

std::string to_string(ApMethod m);
ApMethod ap_method_from_string(const std::string& s);

/// TP/FP flags aligned with `detections`, which must already be sorted by
/// descending score. Each detection takes the highest-IOU still-unmatched
/// truth with IOU >= threshold.
std::vector<bool> match_detections(std::span<const Detection> detections, std::span<const BoundingBox> truths,
                                   double iou_threshold);

struct LabeledDetection {
  double score = 0;
  bool true_positive = false;
};

struct PRPoint {
  double recall = 0;
  double precision = 0;
  double cutoff = 0;  ///< lowest score admitted at this point
};

struct PRCurve {
  std::vector<PRPoint> points;
};

struct ApResult {
  std::optional<double> ap;  ///< nullopt when there are no ground-truth objects
  PRCurve curve;
  int n_truths = 0;
  int n_detections = 0;
};

/// Area under the precision envelope. Tied scores enter the curve together.
ApResult average_precision(std::span<const LabeledDetection> labeled, int n_truths,
                           ApMethod method = ApMethod::AllPoint);

/// Collects labelled detections image by image.
class ApAccumulator {
 public:
  explicit ApAccumulator(double match_iou) : match_iou_(match_iou) {}
  void add(std::span<const Detection> detections, std::span<const BoundingBox> truths);
  ApResult result(ApMethod method = ApMethod::AllPoint) const;

 private:
  double match_iou_;
  std::vector<LabeledDetection> labeled_;
  int n_truths_ = 0;
};

// ---------------------------------------------------------------------------
// Patched evaluation

struct EvalOptions {
  double conf_threshold = 0.4;
  double nms_iou_threshold = 0.45;
  double match_iou = 0.5;
  std::string target_class = kDefaultTargetClass;
  ApMethod method = ApMethod::AllPoint;
  Resampling resampling = Resampling::Bilinear;
};

/// Condition applied to the patch at evaluation time (no randomness).
struct EvalCondition {
  double angle_deg = 0.0;
  double scale = 1.0;
  double brightness = 0.0;
  bool is_identity() const { return angle_deg == 0.0 && scale == 1.0 && brightness == 0.0; }
};

/// Target-class AP of `detector` over `scenes`, with `patch` (if any) placed on
/// every ground-truth target box.
ApResult evaluate_ap(const DetectorAdapter& detector, std::span<const SceneImage> scenes, const Patch* patch,
                     const PlacementSpec& spec, const EvalOptions& options, const EvalCondition& condition = {});

double evaluate_clean_ap(const DetectorAdapter& detector, std::span<const SceneImage> scenes,
                         const EvalOptions& options);

/// Seeded uniform-noise patch used as the occlusion baseline.
Patch noise_patch(int resolution, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Transfer benchmark

inline constexpr const char* kNoiseRow = "noise";

struct TransferCell {
  std::string proxy;     ///< patch source detector id, or kNoiseRow
  std::string detector;  ///< evaluated detector id
  bool available = true;
  bool white_box = false;
  double ap = 0;                       ///< fraction in [0,1]
  std::optional<double> relative_ap;   ///< ap / clean ap
  PRCurve curve;
};

struct TransferMatrix {
  std::vector<std::string> proxies;    ///< row order, noise row excluded
  std::vector<std::string> detectors;  ///< column order
  std::map<std::string, double> clean_ap;
  std::vector<TransferCell> cells;     ///< row-major, noise row last

  const TransferCell* find(const std::string& proxy, const std::string& detector) const;
};

/// A null entry in `detectors` marks an adapter that failed to load; its
/// column is reported as unavailable.
struct NamedDetector {
  std::string id;
  const DetectorAdapter* adapter = nullptr;
};

TransferMatrix run_transfer_benchmark(const std::map<std::string, Patch>& patches,
                                      std::span<const NamedDetector> detectors, std::span<const SceneImage> scenes,
                                      const PlacementSpec& spec, const EvalOptions& options,
                                      std::uint64_t noise_seed, int noise_resolution = kDefaultPatchResolution);

// ---------------------------------------------------------------------------
// Report

struct ReportRow {
  std::string proxy;
  std::string detector;
  bool available = true;
  bool white_box = false;
  double clean_ap = 0;
  double noise_ap = 0;
  double patched_ap = 0;
  double ap_drop = 0;        ///< noise_ap - patched_ap (derived)
  double ap_drop_clean = 0;  ///< clean_ap - patched_ap (derived)
  double relative_ap = 0;    ///< patched_ap / clean_ap (derived, 0 when clean is 0)
};

struct BenchmarkReport {
  static constexpr int kSchemaVersion = 1;
  std::string config_hash;
  std::string placement_mode;
  std::string ap_method = "all_point";
  std::vector<std::string> proxies;
  std::vector<std::string> detectors;
  std::map<std::string, double> clean_ap;
  std::map<std::string, double> noise_ap;
  std::vector<ReportRow> rows;
  std::map<std::string, PRCurve> pr_curves;  ///< keyed "proxy|detector"
  double runtime_seconds = 0;

  friend bool operator==(const BenchmarkReport&, const BenchmarkReport&) = default;
};

bool operator==(const ReportRow& a, const ReportRow& b);
bool operator==(const PRCurve& a, const PRCurve& b);

BenchmarkReport make_report(const TransferMatrix& matrix, const std::string& config_hash,
                            const std::string& placement_mode);

/// Recomputes every derived field from the raw AP cells.
void recompute_derived(BenchmarkReport& report);

/// Names of rows whose stored derived fields disagree with a recomputation
/// (tolerance 1e-9).
std::vector<std::string> derived_mismatches(const BenchmarkReport& report);

/// AP value as a percentage with two decimals ("87.86"); "n/a" when unavailable.
std::string format_percent(double fraction);

/// Patched-AP matrix as CSV: one row per proxy plus the noise row, one column
/// per detector, values in percent.
std::string matrix_csv(const BenchmarkReport& report);

/// Human-readable tables: the AP matrix with white-box cells marked `*`, then
/// one line per cell with clean, noise and patched AP and the derived drops.
/// Deterministic for a given report.
std::string render_report_table(const BenchmarkReport& report);

/// P-R curve as "recall,precision,cutoff" CSV.
std::string pr_curve_csv(const PRCurve& curve);

// ---------------------------------------------------------------------------
// Dynamics sweep

struct SweepCell {
  EvalCondition condition;
  double ap = 0;
};

struct SweepTable {
  std::vector<double> angles;
  std::vector<double> scales;
  std::vector<double> brightness;
  std::vector<SweepCell> cells;  ///< angle-major, then scale, then brightness
};

SweepTable run_dynamics_sweep(const Patch& patch, const DetectorAdapter& detector, std::span<const SceneImage> scenes,
                              const PlacementSpec& spec, const EvalOptions& options, std::span<const double> angles,
                              std::span<const double> scales, std::span<const double> brightness);

}  // namespace appa
