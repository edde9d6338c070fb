#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "appa/core_types.hpp"

namespace appa {

/// Parameters of the desk-scale aerial scene generator. Targets are
/// aircraft-shaped glyphs (fuselage, wings, tail) in one of four headings;
/// distractors are solid rectangles or ellipses.
struct SyntheticSceneSpec {
  int image_size = 64;
  int min_targets = 1;
  int max_targets = 4;
  int min_distractors = 0;
  int max_distractors = 2;
  int min_glyph = 12;  ///< glyph side range in pixels
  int max_glyph = 22;
  std::uint64_t background_seed = 0;  ///< mixed into every image's stream
  std::string target_class = kDefaultTargetClass;
  std::string distractor_class = "distractor";
};

void validate_synthetic_spec(const SyntheticSceneSpec& spec);

/// Deterministic per seed. Image i depends only on (spec, seed, i), so a
/// dataset of n images is a prefix of any larger one.
std::vector<SceneImage> generate_synthetic_dataset(const SyntheticSceneSpec& spec, int n_images, std::uint64_t seed);

SceneImage generate_synthetic_scene(const SyntheticSceneSpec& spec, std::uint64_t seed, int index);

}  // namespace appa
