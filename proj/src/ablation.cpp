#include "appa/ablation.hpp"

#include "appa/data_io.hpp"
#include "appa/evalbench.hpp"

namespace appa {

std::vector<AblationRow> run_resolution_ablation(std::span<const int> resolutions, const RunConfig& config,
                                                 const DetectorAdapter& detector, std::span<const SceneImage> train,
                                                 std::span<const SceneImage> test, std::uint64_t max_steps) {
  if (resolutions.empty()) fail(ErrorKind::Usage, "resolution ablation needs at least one resolution");
  const auto options = config.eval_options();
  const double clean = evaluate_clean_ap(detector, test, options);
  std::vector<AblationRow> rows;
  for (const int res : resolutions) {
    RunConfig c = config;
    c.patch_resolution = res;
    finalize_config(c);
    TrainOutputs out;
    out.max_steps = max_steps;
    const auto [patch, state] = train_patch(c, detector, train, out);
    const Patch noise = noise_patch(res, config.seed);
    AblationRow row;
    row.resolution = res;
    row.clean_ap = clean;
    row.noise_ap = evaluate_ap(detector, test, &noise, c.placement, options).ap.value_or(0.0);
    row.patched_ap = evaluate_ap(detector, test, &patch, c.placement, options).ap.value_or(0.0);
    row.ap_drop = row.noise_ap - row.patched_ap;
    rows.push_back(row);
  }
  return rows;
}

}  // namespace appa
