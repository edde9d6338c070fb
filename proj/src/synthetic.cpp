#include "appa/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "appa/rng.hpp"

namespace appa {

void validate_synthetic_spec(const SyntheticSceneSpec& s) {
  if (s.image_size < 16) fail(ErrorKind::Config, "synthetic.image_size must be at least 16");
  if (s.min_targets < 0 || s.max_targets < s.min_targets) fail(ErrorKind::Config, "synthetic target count range invalid");
  if (s.min_distractors < 0 || s.max_distractors < s.min_distractors) {
    fail(ErrorKind::Config, "synthetic distractor count range invalid");
  }
  if (s.min_glyph < 4 || s.max_glyph < s.min_glyph || s.max_glyph > s.image_size / 2) {
    fail(ErrorKind::Config, "synthetic glyph size range invalid");
  }
  if (s.target_class.empty() || s.distractor_class.empty() || s.target_class == s.distractor_class) {
    fail(ErrorKind::Config, "synthetic class names must be distinct and nonempty");
  }
}

namespace {

// Binary glyph mask, row-major.
struct Glyph {
  int h = 0;
  int w = 0;
  std::vector<char> on;
  bool at(int r, int c) const { return on[std::size_t(r) * w + c] != 0; }
};

Glyph aircraft_glyph(int size, int heading) {
  Glyph g{size, size, std::vector<char>(std::size_t(size) * size, 0)};
  auto fill = [&](int r0, int r1, int c0, int c1) {
    for (int r = std::max(0, r0); r < std::min(size, r1); ++r) {
      for (int c = std::max(0, c0); c < std::min(size, c1); ++c) g.on[std::size_t(r) * size + c] = 1;
    }
  };
  const int fw = std::max(2, static_cast<int>(std::lround(size * 0.18)));
  const int fc0 = (size - fw) / 2;
  fill(0, size, fc0, fc0 + fw);  // fuselage
  const int wh = std::max(2, static_cast<int>(std::lround(size * 0.2)));
  const int wr0 = static_cast<int>(std::lround(size * 0.32));
  fill(wr0, wr0 + wh, 0, size);  // wings
  const int tw = std::max(fw + 2, static_cast<int>(std::lround(size * 0.5)));
  const int th = std::max(1, static_cast<int>(std::lround(size * 0.12)));
  const int tc0 = (size - tw) / 2;
  fill(size - th, size, tc0, tc0 + tw);  // tail
  // Rotate by quarter turns: 0 nose up, 1 nose right, 2 nose down, 3 nose left.
  for (int k = 0; k < heading; ++k) {
    Glyph r{size, size, std::vector<char>(g.on.size(), 0)};
    for (int row = 0; row < size; ++row) {
      for (int col = 0; col < size; ++col) r.on[std::size_t(col) * size + (size - 1 - row)] = g.on[std::size_t(row) * size + col];
    }
    g = std::move(r);
  }
  return g;
}

Glyph distractor_glyph(int h, int w, bool ellipse) {
  Glyph g{h, w, std::vector<char>(std::size_t(h) * w, 1)};
  if (ellipse) {
    const double cy = h / 2.0;
    const double cx = w / 2.0;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const double dy = (r + 0.5 - cy) / (h / 2.0);
        const double dx = (c + 0.5 - cx) / (w / 2.0);
        g.on[std::size_t(r) * w + c] = dx * dx + dy * dy <= 1.0 ? 1 : 0;
      }
    }
  }
  return g;
}

// Smooth value noise in [0,1] built from a coarse random lattice.
std::vector<double> value_noise(Rng& rng, int size, int cells) {
  std::vector<double> lattice(std::size_t(cells + 1) * (cells + 1));
  for (auto& v : lattice) v = rng.uniform();
  std::vector<double> out(std::size_t(size) * size);
  for (int r = 0; r < size; ++r) {
    const double fy = double(r) / size * cells;
    const int y0 = std::min(cells - 1, static_cast<int>(fy));
    const double ty = fy - y0;
    for (int c = 0; c < size; ++c) {
      const double fx = double(c) / size * cells;
      const int x0 = std::min(cells - 1, static_cast<int>(fx));
      const double tx = fx - x0;
      auto L = [&](int y, int x) { return lattice[std::size_t(y) * (cells + 1) + x]; };
      out[std::size_t(r) * size + c] = (1 - ty) * ((1 - tx) * L(y0, x0) + tx * L(y0, x0 + 1)) +
                                       ty * ((1 - tx) * L(y0 + 1, x0) + tx * L(y0 + 1, x0 + 1));
    }
  }
  return out;
}

bool overlaps(const BoundingBox& a, const std::vector<BoundingBox>& placed, double margin) {
  for (const auto& b : placed) {
    if (a.x1 < b.x2 + margin && b.x1 < a.x2 + margin && a.y1 < b.y2 + margin && b.y1 < a.y2 + margin) return true;
  }
  return false;
}

}  // namespace

SceneImage generate_synthetic_scene(const SyntheticSceneSpec& spec, std::uint64_t seed, int index) {
  validate_synthetic_spec(spec);
  Rng rng(mix_seed(seed ^ mix_seed(spec.background_seed, 0xB6), static_cast<std::uint64_t>(index)));
  const int S = spec.image_size;
  SceneImage scene;
  char name[32];
  std::snprintf(name, sizeof name, "synth_%06d", index);
  scene.name = name;
  scene.pixels = Image(3, S, S);

  static constexpr std::array<std::array<double, 3>, 4> kGround = {
      {{0.33, 0.42, 0.28}, {0.42, 0.42, 0.42}, {0.55, 0.50, 0.38}, {0.30, 0.34, 0.36}}};
  const auto& base = kGround[rng.below(kGround.size())];
  const auto coarse = value_noise(rng, S, 4);
  const auto medium = value_noise(rng, S, 9);
  for (int r = 0; r < S; ++r) {
    for (int c = 0; c < S; ++c) {
      const std::size_t i = std::size_t(r) * S + c;
      const double t = 0.18 * (coarse[i] - 0.5) + 0.08 * (medium[i] - 0.5);
      for (int ch = 0; ch < 3; ++ch) {
        const double v = base[ch] + t + 0.02 * rng.uniform(-1.0, 1.0);
        scene.pixels.at(ch, r, c) = std::clamp(v, 0.0, 1.0);
      }
    }
  }

  std::vector<BoundingBox> placed;
  auto stamp = [&](const Glyph& g, int top, int left, const std::array<double, 3>& color, const std::string& label) {
    int r0 = g.h, r1 = -1, c0 = g.w, c1 = -1;
    for (int r = 0; r < g.h; ++r) {
      for (int c = 0; c < g.w; ++c) {
        if (!g.at(r, c)) continue;
        r0 = std::min(r0, r);
        r1 = std::max(r1, r);
        c0 = std::min(c0, c);
        c1 = std::max(c1, c);
        const double shade = 0.03 * rng.uniform(-1.0, 1.0);
        for (int ch = 0; ch < 3; ++ch) {
          scene.pixels.at(ch, top + r, left + c) = std::clamp(color[ch] + shade, 0.0, 1.0);
        }
      }
    }
    scene.annotations.push_back({label, BoundingBox{double(left + c0), double(top + r0), double(left + c1 + 1), double(top + r1 + 1)}});
  };
  auto find_spot = [&](int h, int w, int& top, int& left) {
    for (int attempt = 0; attempt < 200; ++attempt) {
      top = rng.uniform_int(1, S - h - 1);
      left = rng.uniform_int(1, S - w - 1);
      const BoundingBox b{double(left), double(top), double(left + w), double(top + h)};
      if (!overlaps(b, placed, 3.0)) {
        placed.push_back(b);
        return true;
      }
    }
    return false;
  };

  const int n_targets = rng.uniform_int(spec.min_targets, spec.max_targets);
  for (int k = 0; k < n_targets; ++k) {
    const int size = rng.uniform_int(spec.min_glyph, spec.max_glyph);
    const int heading = static_cast<int>(rng.below(4));
    const double tone = rng.uniform(0.78, 0.97);
    const std::array<double, 3> color = {tone, tone, std::min(1.0, tone + 0.02)};
    int top = 0, left = 0;
    if (!find_spot(size, size, top, left)) continue;
    stamp(aircraft_glyph(size, heading), top, left, color, spec.target_class);
  }
  const int n_distractors = rng.uniform_int(spec.min_distractors, spec.max_distractors);
  for (int k = 0; k < n_distractors; ++k) {
    const int h = rng.uniform_int(spec.min_glyph / 2 + 2, spec.max_glyph);
    const int w = rng.uniform_int(spec.min_glyph / 2 + 2, spec.max_glyph);
    const bool ellipse = rng.below(2) == 1;
    std::array<double, 3> color;
    if (rng.below(2) == 0) {
      const double tone = rng.uniform(0.7, 0.97);
      color = {tone, tone, tone};
    } else {
      color = {rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)};
    }
    int top = 0, left = 0;
    if (!find_spot(h, w, top, left)) continue;
    stamp(distractor_glyph(h, w, ellipse), top, left, color, spec.distractor_class);
  }
  return scene;
}

std::vector<SceneImage> generate_synthetic_dataset(const SyntheticSceneSpec& spec, int n_images, std::uint64_t seed) {
  validate_synthetic_spec(spec);
  if (n_images <= 0) fail(ErrorKind::Config, "n_images must be positive");
  std::vector<SceneImage> out;
  out.reserve(n_images);
  for (int i = 0; i < n_images; ++i) out.push_back(generate_synthetic_scene(spec, seed, i));
  return out;
}

}  // namespace appa
