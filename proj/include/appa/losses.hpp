#pragma once

#include <array>
#include <filesystem>
#include <span>
#include <vector>

#include "appa/core_types.hpp"

namespace appa {

struct LossBreakdown {
  double l_obj = 0;
  double l_tv = 0;
  double l_nps = 0;
  double total = 0;
  int n_detections = 0;
};

using Rgb = std::array<double, 3>;

struct PrintableColorSet {
  std::vector<Rgb> colors;
};

void validate_color_set(const PrintableColorSet& set);

/// Default printer gamut: 30 RGB triples shipped with the toolkit.
const PrintableColorSet& default_printable_colors();

/// Plain text, one "r g b" triple per line, values in [0,1]. Blank lines and
/// lines starting with '#' are ignored.
PrintableColorSet load_printable_colors(const std::filesystem::path& path);

inline constexpr double kTvEpsilon = 1e-8;

/// Mean objectness over detections; 0 for an empty list.
double objectness_loss(std::span<const Detection> detections);

/// Smoothed isotropic total variation over interior pixels (rows 0..H-2,
/// cols 0..W-2), summed over channels and divided by H*W. Works for any
/// channel count.
double tv_loss(const Image& p, double eps = kTvEpsilon);
/// Gradient of tv_loss with respect to every pixel.
Image tv_loss_grad(const Image& p, double eps = kTvEpsilon);

/// Mean over pixels of the Euclidean distance from the pixel's RGB triple to
/// the nearest printable colour.
double nps_loss(const Image& p, const PrintableColorSet& colors);
/// Gradient of nps_loss. At a pixel that coincides with its nearest colour the
/// distance is not differentiable; the zero subgradient is used there.
Image nps_loss_grad(const Image& p, const PrintableColorSet& colors);

double total_loss(double l_obj, double l_tv, double l_nps, const Hyperparameters& h);

LossBreakdown make_breakdown(double l_obj, double l_tv, double l_nps, int n_detections, const Hyperparameters& h);

}  // namespace appa
