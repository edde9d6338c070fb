#include "appa/placement.hpp"

#include <algorithm>
#include <cmath>

namespace appa {

Point center_on_target(const BoundingBox& b) {
  validate_box(b);
  return {(b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2};
}

PatchSize patch_size_on_target(const BoundingBox& b, double r_s) {
  validate_box(b);
  if (!(r_s > 0.0 && r_s <= 1.0)) fail(ErrorKind::Invariant, "area ratio r_s must lie in (0,1]");
  const double side = std::sqrt(r_s * b.width() * b.height());
  return {side, side};
}

double outside_distance(const BoundingBox& b, double r_d) {
  validate_box(b);
  if (!(r_d > 0.0) || !std::isfinite(r_d)) fail(ErrorKind::Invariant, "distance ratio r_d must be positive");
  return (b.y2 - b.y1) / r_d;
}

Point center_outside_target(const BoundingBox& b, double r_d) {
  const double d = outside_distance(b, r_d);
  return {(b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2 - d};
}

Mask build_mask(int image_height, int image_width, Point center, double size) {
  if (!(size > 0.0) || !std::isfinite(size)) fail(ErrorKind::Invariant, "patch size must be positive");
  Mask m;
  m.image_height = image_height;
  m.image_width = image_width;
  m.extent = std::max(1, static_cast<int>(std::floor(size + 0.5)));
  m.left = static_cast<int>(std::floor(center.first - size / 2 + 0.5));
  m.top = static_cast<int>(std::floor(center.second - size / 2 + 0.5));
  m.row0 = std::max(0, m.top);
  m.col0 = std::max(0, m.left);
  m.rows = std::max(0, std::min(image_height, m.top + m.extent) - m.row0);
  m.cols = std::max(0, std::min(image_width, m.left + m.extent) - m.col0);
  return m;
}

PlacementResult place(const BoundingBox& target, const PlacementSpec& spec, int image_height, int image_width,
                      double size_scale) {
  PlacementResult r;
  r.center = spec.mode == PlacementMode::OnTarget ? center_on_target(target) : center_outside_target(target, spec.r_d);
  r.size = patch_size_on_target(target, spec.r_s).first * size_scale;
  r.mask = build_mask(image_height, image_width, r.center, r.size);
  return r;
}

Resampler::Resampler(int in_size, int out_size, Resampling mode)
    : in_(in_size), out_(out_size), w_(std::size_t(in_size) * out_size, 0.0) {
  if (in_size < 1 || out_size < 1) fail(ErrorKind::Invariant, "resampling sizes must be positive");
  const double scale = double(in_) / out_;
  for (int i = 0; i < out_; ++i) {
    double* row = w_.data() + std::size_t(i) * in_;
    const double center = (i + 0.5) * scale;
    if (mode == Resampling::Nearest) {
      const int j = std::clamp(static_cast<int>(std::floor(center)), 0, in_ - 1);
      row[j] = 1.0;
      continue;
    }
    const double support = std::max(1.0, scale);
    double total = 0;
    for (int j = 0; j < in_; ++j) {
      const double t = std::abs(j + 0.5 - center) / support;
      if (t < 1.0) {
        row[j] = 1.0 - t;
        total += row[j];
      }
    }
    if (total <= 0) {
      row[std::clamp(static_cast<int>(std::floor(center)), 0, in_ - 1)] = 1.0;
    } else if (total != 1.0) {
      for (int j = 0; j < in_; ++j) row[j] /= total;
    }
  }
}

Image resample(const Image& src, int out_height, int out_width, Resampling mode) {
  if (out_height == src.height() && out_width == src.width() && mode == Resampling::Bilinear) return src;
  const Resampler ry(src.height(), out_height, mode);
  const Resampler rx(src.width(), out_width, mode);
  Image tmp(src.channels(), src.height(), out_width);
  for (int c = 0; c < src.channels(); ++c) {
    for (int r = 0; r < src.height(); ++r) {
      for (int k = 0; k < out_width; ++k) {
        double acc = 0;
        for (int l = 0; l < src.width(); ++l) {
          const double w = rx.weight(k, l);
          if (w != 0.0) acc += w * src.at(c, r, l);
        }
        tmp.at(c, r, k) = acc;
      }
    }
  }
  Image out(src.channels(), out_height, out_width);
  for (int c = 0; c < src.channels(); ++c) {
    for (int i = 0; i < out_height; ++i) {
      for (int j = 0; j < src.height(); ++j) {
        const double w = ry.weight(i, j);
        if (w == 0.0) continue;
        for (int k = 0; k < out_width; ++k) out.at(c, i, k) += w * tmp.at(c, j, k);
      }
    }
  }
  return out;
}

Image resample_adjoint(const Image& grad_out, int in_height, int in_width, Resampling mode) {
  if (in_height == grad_out.height() && in_width == grad_out.width() && mode == Resampling::Bilinear) return grad_out;
  const Resampler ry(in_height, grad_out.height(), mode);
  const Resampler rx(in_width, grad_out.width(), mode);
  Image tmp(grad_out.channels(), in_height, grad_out.width());
  for (int c = 0; c < grad_out.channels(); ++c) {
    for (int i = 0; i < grad_out.height(); ++i) {
      for (int j = 0; j < in_height; ++j) {
        const double w = ry.weight(i, j);
        if (w == 0.0) continue;
        for (int k = 0; k < grad_out.width(); ++k) tmp.at(c, j, k) += w * grad_out.at(c, i, k);
      }
    }
  }
  Image g(grad_out.channels(), in_height, in_width);
  for (int c = 0; c < grad_out.channels(); ++c) {
    for (int r = 0; r < in_height; ++r) {
      for (int k = 0; k < grad_out.width(); ++k) {
        const double v = tmp.at(c, r, k);
        if (v == 0.0) continue;
        for (int l = 0; l < in_width; ++l) {
          const double w = rx.weight(k, l);
          if (w != 0.0) g.at(c, r, l) += w * v;
        }
      }
    }
  }
  return g;
}

Image composite(const Image& x, const Image& p_t, const Mask& mask, const Image* coverage) {
  if (mask.empty()) return x;
  if (p_t.height() != mask.extent || p_t.width() != mask.extent || p_t.channels() != x.channels()) {
    fail(ErrorKind::Invariant, "resampled patch is " + std::to_string(p_t.height()) + "x" + std::to_string(p_t.width()) +
                                   " but the mask extent is " + std::to_string(mask.extent));
  }
  if (coverage && !coverage->empty() &&
      (coverage->height() != mask.extent || coverage->width() != mask.extent || coverage->channels() != 1)) {
    fail(ErrorKind::Invariant, "coverage map does not match the mask extent");
  }
  if (mask.image_height != x.height() || mask.image_width != x.width()) {
    fail(ErrorKind::Invariant, "mask was built for a different image size");
  }
  Image out = x;
  const bool soft = coverage && !coverage->empty();
  for (int c = 0; c < x.channels(); ++c) {
    for (int r = mask.row0; r < mask.row0 + mask.rows; ++r) {
      for (int col = mask.col0; col < mask.col0 + mask.cols; ++col) {
        const int pr = r - mask.top;
        const int pc = col - mask.left;
        const double a = soft ? coverage->at(0, pr, pc) : 1.0;
        out.at(c, r, col) = (1.0 - a) * x.at(c, r, col) + p_t.at(c, pr, pc);
      }
    }
  }
  return out;
}

AdversarialImage apply_patch(const Image& x, const Patch& p, const PlacementSpec& spec,
                             std::span<const BoundingBox> boxes, std::span<const TransformParams> params,
                             Resampling resampling) {
  if (!params.empty() && params.size() != boxes.size()) {
    fail(ErrorKind::Invariant, "need one transform parameter set per target box");
  }
  AdversarialImage adv;
  adv.image = x;
  adv.patch_height = p.height();
  adv.patch_width = p.width();
  adv.resampling = resampling;
  static const TransformParams kIdentity{};
  for (std::size_t k = 0; k < boxes.size(); ++k) {
    BoxApplication app;
    app.target = boxes[k];
    app.params = params.empty() ? kIdentity : params[k];
    app.placement = place(boxes[k], spec, x.height(), x.width(), app.params.scale);
    if (app.placement.mask.empty()) continue;
    app.transformed = apply_transform(p, app.params);
    const int n = app.placement.mask.extent;
    const Image resized = resample(app.transformed.pixels, n, n, resampling);
    if (!app.transformed.coverage.empty()) app.coverage = resample(app.transformed.coverage, n, n, resampling);
    adv.image = composite(adv.image, resized, app.placement.mask, &app.coverage);
    adv.applications.push_back(std::move(app));
  }
  return adv;
}

Image backprop_to_patch(const AdversarialImage& adv, const Image& grad_image) {
  if (!grad_image.same_shape(adv.image)) fail(ErrorKind::Invariant, "image gradient shape mismatch");
  Image g = grad_image;
  Image grad_patch(3, adv.patch_height, adv.patch_width);
  for (auto it = adv.applications.rbegin(); it != adv.applications.rend(); ++it) {
    const Mask& m = it->placement.mask;
    const bool soft = !it->coverage.empty();
    Image g_resized(3, m.extent, m.extent);
    for (int c = 0; c < 3; ++c) {
      for (int r = m.row0; r < m.row0 + m.rows; ++r) {
        for (int col = m.col0; col < m.col0 + m.cols; ++col) {
          const int pr = r - m.top;
          const int pc = col - m.left;
          double& gv = g.at(c, r, col);
          g_resized.at(c, pr, pc) = gv;
          gv *= soft ? 1.0 - it->coverage.at(0, pr, pc) : 0.0;
        }
      }
    }
    const Image g_transformed = resample_adjoint(g_resized, adv.patch_height, adv.patch_width, adv.resampling);
    const Image g_src = transform_backward(it->transformed, it->params, g_transformed);
    for (std::size_t i = 0; i < grad_patch.size(); ++i) grad_patch.data()[i] += g_src.data()[i];
  }
  return grad_patch;
}

Image place_all(const Image& x, const Patch& p, const PlacementSpec& spec, std::span<const BoundingBox> boxes,
                Resampling resampling, std::string* warning) {
  if (boxes.empty()) {
    if (warning) *warning = "no target boxes; image returned unchanged";
    return x;
  }
  return apply_patch(x, p, spec, boxes, {}, resampling).image;
}

}  // namespace appa
