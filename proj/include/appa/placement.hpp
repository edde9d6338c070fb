#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "appa/core_types.hpp"
#include "appa/transforms.hpp"

namespace appa {

using Point = std::pair<double, double>;  ///< (x, y) in pixels
using PatchSize = std::pair<double, double>;  ///< (width, height) in pixels

/// Patch centre at the box centre.
Point center_on_target(const BoundingBox& b);

/// Square patch whose area is r_s times the box area.
PatchSize patch_size_on_target(const BoundingBox& b, double r_s);

/// Vertical offset between target centre and patch centre: box height / r_d.
double outside_distance(const BoundingBox& b, double r_d);

/// Patch centre above the target, offset by outside_distance().
Point center_outside_target(const BoundingBox& b, double r_d);

/// Square placement footprint. The unclipped square spans rows
/// [top, top + extent) and cols [left, left + extent) where
/// left = floor(cx - size/2 + 0.5) and extent = max(1, floor(size + 0.5));
/// the clipped region is its intersection with the image.
struct Mask {
  int image_height = 0;
  int image_width = 0;
  int top = 0;
  int left = 0;
  int extent = 0;
  int row0 = 0;
  int col0 = 0;
  int rows = 0;
  int cols = 0;

  bool empty() const noexcept { return rows <= 0 || cols <= 0; }
  std::size_t area() const noexcept { return empty() ? 0 : std::size_t(rows) * cols; }
  bool contains(int row, int col) const noexcept {
    return row >= row0 && row < row0 + rows && col >= col0 && col < col0 + cols;
  }
};

/// Empty masks are a valid outcome (patch fully off-image), not an error.
Mask build_mask(int image_height, int image_width, Point center, double size);

struct PlacementResult {
  Point center;
  double size = 0;  ///< side length w_p = h_p
  Mask mask;
};

/// Geometry for one target box. `size_scale` multiplies the patch size (used
/// by the scale-jitter transform).
PlacementResult place(const BoundingBox& target, const PlacementSpec& spec, int image_height, int image_width,
                      double size_scale = 1.0);

enum class Resampling { Bilinear, Nearest };

/// Separable linear resampling operator. Bilinear uses a triangle kernel whose
/// support widens when downscaling so every source pixel contributes; at
/// scale 1 it is the identity.
class Resampler {
 public:
  Resampler(int in_size, int out_size, Resampling mode);
  int in_size() const { return in_; }
  int out_size() const { return out_; }
  /// Weight of source index j in output index i.
  double weight(int i, int j) const { return w_[std::size_t(i) * in_ + j]; }

 private:
  int in_;
  int out_;
  std::vector<double> w_;
};

Image resample(const Image& src, int out_height, int out_width, Resampling mode);
/// Adjoint of resample: maps an output-space gradient back to source space.
Image resample_adjoint(const Image& grad_out, int in_height, int in_width, Resampling mode);

/// x* = (1 - M*a) . x + M . p_t, where `p_t` is extent x extent and `coverage`
/// (optional, 1 channel, same size) is the premultiplied coverage `a` of p_t.
/// Pixels outside the mask are copied bit-exactly.
Image composite(const Image& x, const Image& p_t, const Mask& mask, const Image* coverage = nullptr);

/// One patch copy composited into a scene, retained for backpropagation.
struct BoxApplication {
  BoundingBox target;
  PlacementResult placement;
  TransformParams params;
  TransformedPatch transformed;
  Image coverage;  ///< resampled coverage, empty means full
};

struct AdversarialImage {
  Image image;
  std::vector<BoxApplication> applications;
  int patch_height = 0;
  int patch_width = 0;
  Resampling resampling = Resampling::Bilinear;
};

/// PT then PA for every box, in order (later boxes overwrite earlier ones).
/// `params` holds one transform per box; an empty span means identity for all.
AdversarialImage apply_patch(const Image& x, const Patch& p, const PlacementSpec& spec,
                             std::span<const BoundingBox> boxes, std::span<const TransformParams> params = {},
                             Resampling resampling = Resampling::Bilinear);

/// Gradient with respect to the patch pixels given the gradient with respect
/// to the adversarial image.
Image backprop_to_patch(const AdversarialImage& adv, const Image& grad_image);

/// Untransformed placement of one patch copy per box. Returns `x` unchanged
/// (and sets `warning`) when `boxes` is empty.
Image place_all(const Image& x, const Patch& p, const PlacementSpec& spec, std::span<const BoundingBox> boxes,
                Resampling resampling = Resampling::Bilinear, std::string* warning = nullptr);

}  // namespace appa
