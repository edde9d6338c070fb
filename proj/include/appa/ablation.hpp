#pragma once

#include <span>
#include <vector>

#include "appa/config.hpp"
#include "appa/detector.hpp"
#include "appa/optimizer.hpp"

namespace appa {

struct AblationRow {
  int resolution = 0;
  double clean_ap = 0;
  double noise_ap = 0;    ///< seeded noise patch of the same resolution
  double patched_ap = 0;
  double ap_drop = 0;     ///< noise_ap - patched_ap
};

/// Trains one patch per resolution with otherwise identical config and seed,
/// then evaluates each on `test`. `max_steps` caps each training run.
std::vector<AblationRow> run_resolution_ablation(std::span<const int> resolutions, const RunConfig& config,
                                                 const DetectorAdapter& detector, std::span<const SceneImage> train,
                                                 std::span<const SceneImage> test,
                                                 std::uint64_t max_steps = UINT64_MAX);

}  // namespace appa
