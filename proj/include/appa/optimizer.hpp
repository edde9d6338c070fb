#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "appa/config.hpp"
#include "appa/core_types.hpp"
#include "appa/detector.hpp"
#include "appa/losses.hpp"
#include "appa/placement.hpp"
#include "appa/rng.hpp"

namespace appa {

/// Uniform random pixels in [0,1], deterministic per seed.
Patch init_patch(int resolution, std::uint64_t seed);

struct TrainState {
  Patch patch;
  int epoch = 0;
  int iteration = 0;          ///< batch index inside the current epoch
  std::uint64_t step = 0;     ///< completed optimizer steps
  std::vector<double> adam_m;  ///< first-moment accumulator
  std::vector<double> adam_v;  ///< second-moment accumulator
  std::vector<LossBreakdown> history;
  Rng rng;
  std::string config_hash;
  // Early-stopping bookkeeping.
  double epoch_loss_sum = 0;
  double best_epoch_loss = 0;
  int stale_epochs = 0;
  bool finished = false;
};

/// Versioned binary checkpoint.
void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState resume(const std::filesystem::path& checkpoint);

struct BatchEvaluation {
  LossBreakdown loss;
  Image grad;  ///< dL/dpatch
};

/// Owns the patch and optimizer state for one run of the patch-optimization
/// loop: PT -> PA -> detect -> L_obj -> total loss -> Adam step -> clamp.
class PatchTrainer {
 public:
  static constexpr double kAdamBeta1 = 0.9;
  static constexpr double kAdamBeta2 = 0.999;
  static constexpr double kAdamEps = 1e-8;

  PatchTrainer(RunConfig config, const DetectorAdapter& detector, std::span<const SceneImage> data,
               std::optional<TrainState> state = std::nullopt);

  /// Next scheduled batch. Returns its loss (before the update).
  LossBreakdown step();
  /// Update on an explicit batch; does not advance the epoch schedule.
  LossBreakdown step_on(std::span<const std::size_t> indices);
  /// Loss and gradient at the current patch. Transform parameters are drawn
  /// from a copy of the state rng, so the state is left untouched.
  BatchEvaluation evaluate(std::span<const std::size_t> indices) const;

  /// Runs until the epoch cap, early stop, or `max_steps` more steps.
  void run(std::uint64_t max_steps = UINT64_MAX);

  int iterations_per_epoch() const;
  std::vector<std::size_t> batch_indices(int epoch, int iteration) const;

  const TrainState& state() const { return state_; }
  const RunConfig& config() const { return config_; }
  bool finished() const { return state_.finished; }

  /// Called after every step with the new state.
  std::function<void(const TrainState&)> on_step;
  /// Called after every completed epoch.
  std::function<void(const TrainState&)> on_epoch;
  /// Where a diagnostic dump goes when the loss turns non-finite.
  std::filesystem::path dump_dir;

 private:
  BatchEvaluation evaluate_with(std::span<const std::size_t> indices, Rng& rng) const;
  void apply_update(const Image& grad);
  std::vector<BoundingBox> placement_boxes(const SceneImage& scene) const;
  void check_detector() const;

  RunConfig config_;
  const DetectorAdapter& detector_;
  std::span<const SceneImage> data_;
  PrintableColorSet colors_;
  std::uint64_t detector_checksum_ = 0;
  TrainState state_;
};

struct TrainOutputs {
  std::filesystem::path run_dir;  ///< receives checkpoints/ and loss.csv; empty disables file output
  std::uint64_t max_steps = UINT64_MAX;
  std::function<void(const TrainState&)> on_epoch;
};

/// Convenience driver: trains from scratch (or from `resume_state`), writing
/// a checkpoint every epoch and streaming loss history to loss.csv.
std::pair<Patch, TrainState> train_patch(const RunConfig& config, const DetectorAdapter& detector,
                                         std::span<const SceneImage> data, const TrainOutputs& outputs = {},
                                         std::optional<TrainState> resume_state = std::nullopt);

}  // namespace appa
