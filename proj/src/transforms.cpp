#include "appa/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace appa {

TransformConfig TransformConfig::identity() {
  TransformConfig c;
  c.noise_amplitude = 0;
  c.rotation_max_deg = 0;
  c.scale_jitter = 0;
  c.brightness_shift = 0;
  c.contrast_range = 0;
  return c;
}

void validate_transform_config(const TransformConfig& c) {
  auto nonneg = [](double v, const char* key) {
    if (!(v >= 0.0) || !std::isfinite(v)) fail(ErrorKind::Config, std::string("transform.") + key + " must be nonnegative");
  };
  nonneg(c.noise_amplitude, "noise_amplitude");
  nonneg(c.rotation_max_deg, "rotation_max_deg");
  nonneg(c.scale_jitter, "scale_jitter");
  nonneg(c.brightness_shift, "brightness_shift");
  nonneg(c.contrast_range, "contrast_range");
  if (c.rotation_max_deg > 180.0) fail(ErrorKind::Config, "transform.rotation_max_deg must be <= 180");
  if (c.scale_jitter >= 1.0) fail(ErrorKind::Config, "transform.scale_jitter must be < 1");
}

bool TransformParams::is_identity() const {
  return contrast == 1.0 && brightness == 0.0 && angle_deg == 0.0 && scale == 1.0 && noise.empty();
}

TransformParams sample_transform(const TransformConfig& cfg, Rng& rng, int patch_height, int patch_width) {
  TransformParams p;
  const double u_contrast = rng.uniform(-1.0, 1.0);
  const double u_brightness = rng.uniform(-1.0, 1.0);
  const double u_angle = rng.uniform(-1.0, 1.0);
  const double u_scale = rng.uniform(-1.0, 1.0);
  if (cfg.contrast_range > 0) p.contrast = 1.0 + cfg.contrast_range * u_contrast;
  if (cfg.brightness_shift > 0) p.brightness = cfg.brightness_shift * u_brightness;
  if (cfg.rotation_max_deg > 0) p.angle_deg = cfg.rotation_max_deg * u_angle;
  if (cfg.scale_jitter > 0) p.scale = 1.0 + cfg.scale_jitter * u_scale;
  if (cfg.noise_amplitude > 0) {
    p.noise = Image(3, patch_height, patch_width);
    for (auto& v : p.noise.data()) v = cfg.noise_amplitude * rng.uniform(-1.0, 1.0);
  }
  return p;
}

namespace {

struct Rotation {
  double cos_t;
  double sin_t;
};

Rotation rotation_of(double angle_deg) {
  const double rad = angle_deg * std::numbers::pi / 180.0;
  double c = std::cos(rad);
  double s = std::sin(rad);
  // Snap quarter turns so they permute cells exactly.
  if (std::abs(c) < 1e-12) c = 0.0;
  if (std::abs(s) < 1e-12) s = 0.0;
  return {c, s};
}

// Calls f(out_index, in_row, in_col, weight) for every bilinear tap of the
// rotation that lands inside the source grid.
template <typename F>
void for_each_tap(int h, int w, double angle_deg, F&& f) {
  const auto [c, s] = rotation_of(angle_deg);
  const double cy = (h - 1) / 2.0;
  const double cx = (w - 1) / 2.0;
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) {
      const double u = col - cx;
      const double v = r - cy;
      // Inverse map of a counter-clockwise (as displayed) rotation.
      const double sx = u * c - v * s + cx;
      const double sy = u * s + v * c + cy;
      const double fx = std::floor(sx);
      const double fy = std::floor(sy);
      const int x0 = static_cast<int>(fx);
      const int y0 = static_cast<int>(fy);
      const double ax = sx - fx;
      const double ay = sy - fy;
      const int out = r * w + col;
      const double wts[4] = {(1 - ay) * (1 - ax), (1 - ay) * ax, ay * (1 - ax), ay * ax};
      const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
      const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
      for (int k = 0; k < 4; ++k) {
        if (wts[k] == 0.0) continue;
        if (ys[k] < 0 || ys[k] >= h || xs[k] < 0 || xs[k] >= w) continue;
        f(out, ys[k], xs[k], wts[k]);
      }
    }
  }
}

}  // namespace

Image rotate_bilinear(const Image& src, double angle_deg) {
  Image out(src.channels(), src.height(), src.width());
  const int hw = src.height() * src.width();
  for_each_tap(src.height(), src.width(), angle_deg, [&](int o, int y, int x, double wt) {
    for (int ch = 0; ch < src.channels(); ++ch) {
      out.data()[std::size_t(ch) * hw + o] += wt * src.at(ch, y, x);
    }
  });
  return out;
}

Image rotate_bilinear_adjoint(const Image& grad_out, double angle_deg) {
  Image g(grad_out.channels(), grad_out.height(), grad_out.width());
  const int hw = grad_out.height() * grad_out.width();
  for_each_tap(grad_out.height(), grad_out.width(), angle_deg, [&](int o, int y, int x, double wt) {
    for (int ch = 0; ch < grad_out.channels(); ++ch) {
      g.at(ch, y, x) += wt * grad_out.data()[std::size_t(ch) * hw + o];
    }
  });
  return g;
}

TransformedPatch apply_transform(const Patch& p, const TransformParams& params) {
  const Image& src = p.pixels;
  if (!params.noise.empty() && !params.noise.same_shape(src)) {
    fail(ErrorKind::Invariant, "transform noise field does not match patch shape");
  }
  TransformedPatch t;
  t.pre_rotation = src;
  auto& v = t.pre_rotation.data();
  if (params.contrast != 1.0) {
    for (auto& x : v) x *= params.contrast;
  }
  if (params.brightness != 0.0) {
    for (auto& x : v) x += params.brightness;
  }
  if (!params.noise.empty()) {
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += params.noise.data()[i];
  }
  if (params.angle_deg != 0.0) {
    t.pre_clamp = rotate_bilinear(t.pre_rotation, params.angle_deg);
    t.coverage = rotate_bilinear(Image(1, src.height(), src.width(), 1.0), params.angle_deg);
  } else {
    t.pre_clamp = t.pre_rotation;
  }
  t.pixels = t.pre_clamp;
  for (auto& x : t.pixels.data()) x = std::min(1.0, std::max(0.0, x));
  return t;
}

Image transform_backward(const TransformedPatch& t, const TransformParams& params, const Image& grad_pixels) {
  if (!grad_pixels.same_shape(t.pixels)) fail(ErrorKind::Invariant, "gradient shape does not match transformed patch");
  Image g = grad_pixels;
  for (std::size_t i = 0; i < g.size(); ++i) {
    const double x = t.pre_clamp.data()[i];
    if (x < 0.0 || x > 1.0) g.data()[i] = 0.0;
  }
  if (params.angle_deg != 0.0) g = rotate_bilinear_adjoint(g, params.angle_deg);
  if (params.contrast != 1.0) {
    for (auto& x : g.data()) x *= params.contrast;
  }
  return g;
}

}  // namespace appa
