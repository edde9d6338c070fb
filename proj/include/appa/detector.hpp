#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "appa/core_types.hpp"
#include "appa/nn.hpp"

namespace appa {

/// Raw, pre-NMS detector output.
struct Candidate {
  BoundingBox box;
  double objectness = 0;
  std::vector<double> class_scores;  ///< aligned with DetectorAdapter::class_names()
};

/// Opaque activations retained by a forward pass for a later backward pass.
class ForwardTape {
 public:
  virtual ~ForwardTape() = default;
};

struct ForwardResult {
  std::vector<Candidate> candidates;
  std::unique_ptr<ForwardTape> tape;  ///< null unless requested
};

/// Contract every detector plugs in through. Filtering and NMS are applied by
/// the toolkit (see detect()) so every detector is post-processed identically.
class DetectorAdapter {
 public:
  virtual ~DetectorAdapter() = default;

  virtual const std::string& id() const = 0;
  virtual int input_height() const = 0;
  virtual int input_width() const = 0;
  virtual const std::vector<std::string>& class_names() const = 0;
  /// Whether concurrent forward passes are safe.
  virtual bool reentrant() const { return true; }

  /// Deterministic inference. Weights are never modified.
  virtual ForwardResult forward(const Image& image, bool record_tape) const = 0;

  /// Gradient of sum_k d_objectness[k] * objectness_k with respect to the
  /// input pixels of the pass that produced `tape`.
  virtual Image backward_objectness(const ForwardTape& tape, std::span<const double> d_objectness) const = 0;

  /// Bit-exact checksum over all parameters.
  virtual std::uint64_t weight_checksum() const = 0;
};

double iou(const BoundingBox& a, const BoundingBox& b);

/// Greedy NMS. Candidates are visited by descending score (lower index wins
/// ties); a candidate is suppressed when its IOU with an already kept one
/// exceeds `iou_threshold`. Returns kept indices in visiting order.
std::vector<int> nms(std::span<const BoundingBox> boxes, std::span<const double> scores, double iou_threshold);

struct DetectOutput {
  std::vector<Detection> detections;
  std::unique_ptr<ForwardTape> tape;
  std::size_t n_candidates = 0;
};

/// Objectness >= conf_threshold, then NMS at iou_threshold. Detections are in
/// descending-objectness order; `candidate_index` addresses the raw candidate.
DetectOutput detect_with_tape(const DetectorAdapter& adapter, const Image& image, double conf_threshold,
                              double iou_threshold, bool record_tape);

std::vector<Detection> detect(const DetectorAdapter& adapter, const Image& image, double conf_threshold,
                              double iou_threshold);

/// Applies the confidence filter and NMS to an existing candidate list.
std::vector<Detection> postprocess(const DetectorAdapter& adapter, std::span<const Candidate> candidates,
                                   double conf_threshold, double iou_threshold);

// ---------------------------------------------------------------------------
// Built-in toy detector

struct ToyDetectorConfig {
  std::string id = "toy";
  int input_size = 64;
  /// Widths of the 3x3 conv stages.
  std::vector<int> channels = {8, 16, 32, 32, 32, 32};
  /// The first `pooled_stages` stages are followed by 2x2 max pooling, so the
  /// grid stride is 2^pooled_stages.
  int pooled_stages = 3;
  /// Stride-1 max-pool kernels whose outputs are concatenated with the last
  /// stage before the head (spatial pyramid pooling); empty disables.
  std::vector<int> spp_kernels = {5, 9};
  /// Anchor (width, height) pairs in pixels.
  std::vector<std::pair<double, double>> anchors = {{12.0, 12.0}, {20.0, 20.0}};
  std::vector<std::string> classes = {"aircraft", "distractor"};
  std::uint64_t seed = 1;
};

struct ToyTrainOptions {
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 2e-3;
  double min_clean_ap = 0.85;
  double eval_match_iou = 0.5;
  double conf_threshold = 0.4;
  double nms_iou_threshold = 0.45;
  std::string target_class = kDefaultTargetClass;
  /// Called after every epoch with (epoch, mean loss, validation AP or -1).
  std::function<void(int, double, double)> on_epoch;
};

/// Small single-scale anchor-based detector (YOLO-style grid head).
class ToyDetector final : public DetectorAdapter {
 public:
  static constexpr std::uint32_t kCheckpointVersion = 1;

  explicit ToyDetector(ToyDetectorConfig config);

  const std::string& id() const override { return config_.id; }
  int input_height() const override { return config_.input_size; }
  int input_width() const override { return config_.input_size; }
  const std::vector<std::string>& class_names() const override { return config_.classes; }

  ForwardResult forward(const Image& image, bool record_tape) const override;
  Image backward_objectness(const ForwardTape& tape, std::span<const double> d_objectness) const override;
  std::uint64_t weight_checksum() const override;

  const ToyDetectorConfig& config() const { return config_; }
  std::size_t parameter_count() const;
  int grid_size() const;
  int stride() const;
  int outputs_per_anchor() const { return 5 + static_cast<int>(config_.classes.size()); }

  void set_id(std::string id) { config_.id = std::move(id); }

  /// Versioned binary checkpoint with an embedded architecture descriptor.
  void save(const std::filesystem::path& path) const;
  static ToyDetector load(const std::filesystem::path& path);

  /// One supervised gradient pass over `scene`; accumulates parameter
  /// gradients into `grads` (flat, parameter order) and returns the loss.
  double accumulate_training_gradient(const SceneImage& scene, std::vector<float>& grads) const;

  /// Flat views used by the training loop.
  std::vector<float> flat_parameters() const;
  void set_flat_parameters(std::span<const float> params);

 private:
  struct Tape;
  void forward_impl(const Image& image, Tape& tape) const;
  std::vector<Candidate> decode(const Tape& tape) const;
  void backward_impl(const Tape& tape, nn::Tensor& grad_head, std::vector<float>* grads, Image* grad_input) const;

  ToyDetectorConfig config_;
  std::vector<nn::Conv2d> convs_;  ///< 3x3 stages then the 1x1 head
};

/// Trains a ToyDetector; evaluates clean AP on `validation` (or a 10% holdout
/// of `dataset` when `validation` is empty) and throws Data when the AP bar is
/// not met.
ToyDetector train_toy_detector(std::span<const SceneImage> dataset, std::uint64_t seed,
                               const ToyTrainOptions& options = {}, ToyDetectorConfig config = {},
                               std::span<const SceneImage> validation = {});

// ---------------------------------------------------------------------------
// Plugin discovery by id ("detector.id" in run configs).

using DetectorFactory = std::function<std::unique_ptr<DetectorAdapter>(const std::filesystem::path& checkpoint)>;

void register_detector(const std::string& id, DetectorFactory factory);
bool has_detector(const std::string& id);
std::unique_ptr<DetectorAdapter> load_detector(const std::string& id, const std::filesystem::path& checkpoint);

}  // namespace appa
