#pragma once

#include <cstdint>

#include "appa/core_types.hpp"
#include "appa/rng.hpp"

namespace appa {

/// Ranges of the randomized physical-dynamics transforms. Every range is a
/// half-width: contrast in [1-c, 1+c], brightness in [-b, b], rotation in
/// [-r, r] degrees, scale in [1-s, 1+s], per-pixel noise in [-a, a].
struct TransformConfig {
  double noise_amplitude = 0.05;
  double rotation_max_deg = 20.0;
  double scale_jitter = 0.1;
  double brightness_shift = 0.1;
  double contrast_range = 0.2;
  std::uint64_t rng_seed = 0;

  /// All ranges zero.
  static TransformConfig identity();
};

void validate_transform_config(const TransformConfig& cfg);

struct TransformParams {
  double contrast = 1.0;
  double brightness = 0.0;
  double angle_deg = 0.0;  ///< counter-clockwise as displayed (rows grow downward)
  double scale = 1.0;      ///< multiplies the placement size
  Image noise;             ///< additive field, empty when no noise was drawn

  bool is_identity() const;
};

/// Draws one parameter set. Consumes exactly four draws plus one per noise
/// value when noise_amplitude > 0.
TransformParams sample_transform(const TransformConfig& cfg, Rng& rng, int patch_height, int patch_width);

struct TransformedPatch {
  Image pixels;  ///< 3 x H x W, in [0,1]
  /// Coverage of the rotated patch (1 x H x W). Empty when no rotation was
  /// applied, which means full coverage.
  Image coverage;
  /// Photometric result before rotation and clamping; needed by backward.
  Image pre_rotation;
  /// Rotated values before clamping.
  Image pre_clamp;
};

/// contrast multiply -> brightness add -> additive noise -> rotation (bilinear,
/// zero padded, padding tracked in `coverage`) -> clamp to [0,1].
/// Scale is not applied here; callers fold it into the placement size.
TransformedPatch apply_transform(const Patch& p, const TransformParams& params);

/// Vector-Jacobian product: gradient with respect to the source patch pixels
/// given the gradient with respect to `t.pixels`.
Image transform_backward(const TransformedPatch& t, const TransformParams& params, const Image& grad_pixels);

/// Bilinear rotation about the image centre with zero padding.
Image rotate_bilinear(const Image& src, double angle_deg);
/// Adjoint of rotate_bilinear.
Image rotate_bilinear_adjoint(const Image& grad_out, double angle_deg);

}  // namespace appa
