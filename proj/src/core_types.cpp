#include "appa/core_types.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace appa {

void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

Image::Image(int channels, int height, int width, double fill)
    : channels_(channels), height_(height), width_(width) {
  if (channels < 0 || height < 0 || width < 0) {
    fail(ErrorKind::Invariant, "image dimensions must be nonnegative");
  }
  data_.assign(static_cast<std::size_t>(channels) * height * width, fill);
}

bool is_valid_box(const BoundingBox& b) noexcept {
  return std::isfinite(b.x1) && std::isfinite(b.y1) && std::isfinite(b.x2) && std::isfinite(b.y2) &&
         b.x1 < b.x2 && b.y1 < b.y2;
}

void validate_box(const BoundingBox& b) {
  if (!is_valid_box(b)) {
    std::ostringstream os;
    os << "degenerate or non-finite box (" << b.x1 << "," << b.y1 << "," << b.x2 << "," << b.y2 << ")";
    fail(ErrorKind::Invariant, os.str());
  }
}

std::string Detection::top_class() const {
  std::string best;
  double best_score = -1.0;
  for (const auto& [name, score] : class_scores) {
    if (score > best_score) {
      best = name;
      best_score = score;
    }
  }
  return best;
}

std::vector<BoundingBox> SceneImage::boxes_of(const std::string& label) const {
  std::vector<BoundingBox> out;
  for (const auto& a : annotations) {
    if (a.label == label) out.push_back(a.box);
  }
  return out;
}

void validate_scene(const SceneImage& scene) {
  const auto& px = scene.pixels;
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double v = px.data()[i];
    if (!(v >= 0.0 && v <= 1.0)) {
      fail(ErrorKind::Invariant, "scene '" + scene.name + "' pixel " + std::to_string(i) + " outside [0,1]");
    }
  }
  for (const auto& a : scene.annotations) {
    validate_box(a.box);
    if (a.box.x1 < 0 || a.box.y1 < 0 || a.box.x2 > px.width() || a.box.y2 > px.height()) {
      fail(ErrorKind::Invariant, "scene '" + scene.name + "' annotation '" + a.label + "' exceeds image bounds");
    }
  }
}

std::string to_string(PlacementMode mode) {
  return mode == PlacementMode::OnTarget ? "on_target" : "outside_target";
}

PlacementMode placement_mode_from_string(const std::string& text) {
  if (text == "on_target" || text == "on") return PlacementMode::OnTarget;
  if (text == "outside_target" || text == "outside") return PlacementMode::OutsideTarget;
  fail(ErrorKind::Config, "unknown placement mode '" + text + "'");
}

void validate_placement_spec(const PlacementSpec& spec) {
  if (!(spec.r_s > 0.0 && spec.r_s <= 1.0)) fail(ErrorKind::Config, "placement.r_s must lie in (0,1]");
  if (!(spec.r_d > 0.0) || !std::isfinite(spec.r_d)) fail(ErrorKind::Config, "placement.r_d must be positive");
}

void validate_hyperparameters(const Hyperparameters& h) {
  if (!(h.alpha > 0.0)) fail(ErrorKind::Config, "hyper.alpha must be positive");
  if (!(h.beta > 0.0)) fail(ErrorKind::Config, "hyper.beta must be positive");
  if (!(h.eta > 0.0)) fail(ErrorKind::Config, "hyper.eta must be positive");
  if (h.n_epochs < 1) fail(ErrorKind::Config, "hyper.epochs must be at least 1");
  if (h.batch_size < 1) fail(ErrorKind::Config, "hyper.batch_size must be at least 1");
  if (!(h.iou_threshold > 0.0 && h.iou_threshold < 1.0)) fail(ErrorKind::Config, "hyper.iou_threshold must lie in (0,1)");
  if (!(h.conf_threshold > 0.0 && h.conf_threshold < 1.0)) fail(ErrorKind::Config, "hyper.conf_threshold must lie in (0,1)");
  if (h.early_stop_patience < 1) fail(ErrorKind::Config, "hyper.early_stop_patience must be at least 1");
  if (!(h.early_stop_min_delta >= 0.0)) fail(ErrorKind::Config, "hyper.early_stop_min_delta must be nonnegative");
}

const Patch& validate_patch(const Patch& p) {
  const auto& px = p.pixels;
  if (px.channels() != 3) fail(ErrorKind::Invariant, "patch must have 3 channels");
  if (px.height() < 2 || px.width() < 2) {
    fail(ErrorKind::Invariant, "patch must be at least 2x2, got " + std::to_string(px.height()) + "x" +
                                   std::to_string(px.width()));
  }
  for (int c = 0; c < 3; ++c) {
    for (int r = 0; r < px.height(); ++r) {
      for (int col = 0; col < px.width(); ++col) {
        const double v = px.at(c, r, col);
        if (!(v >= 0.0 && v <= 1.0)) {
          std::ostringstream os;
          os << "patch pixel (c=" << c << ", row=" << r << ", col=" << col << ") = " << v << " outside [0,1]";
          fail(ErrorKind::Invariant, os.str());
        }
      }
    }
  }
  return p;
}

Patch clamp_patch(Patch p) {
  for (double& v : p.pixels.data()) {
    if (!std::isfinite(v)) fail(ErrorKind::Numeric, "cannot clamp non-finite patch value");
    v = std::min(1.0, std::max(0.0, v));
  }
  return p;
}

Patch constant_patch(int height, int width, double value, std::string id) {
  return Patch{Image(3, height, width, value), std::move(id)};
}

}  // namespace appa
