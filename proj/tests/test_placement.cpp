#include <doctest.h>

#include <cmath>

#include "appa/placement.hpp"
#include "appa/rng.hpp"
#include "oracles.hpp"

using namespace appa;

namespace {

bool rel_close(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b)); }

int count_differences(const Image& a, const Image& b) {
  int n = 0;
  for (int r = 0; r < a.height(); ++r) {
    for (int c = 0; c < a.width(); ++c) {
      for (int k = 0; k < a.channels(); ++k) {
        if (a.at(k, r, c) != b.at(k, r, c)) {
          ++n;
          break;
        }
      }
    }
  }
  return n;
}

}  // namespace

TEST_CASE("centre of a box") {
  CHECK(center_on_target({10, 20, 30, 60}) == Point{20, 40});
  CHECK(center_on_target({0, 0, 2, 2}) == Point{1, 1});
  CHECK(center_on_target({5, 5, 5.5, 9}) == Point{5.25, 7});
}

TEST_CASE("on-target patch size") {
  CHECK(patch_size_on_target({0, 0, 40, 90}, 0.25) == PatchSize{30, 30});
  CHECK(patch_size_on_target({3, 3, 20, 20}, 1.0) == PatchSize{17, 17});
  const auto s = patch_size_on_target({0, 0, 50, 20}, 0.1);
  CHECK(s.first == doctest::Approx(10).epsilon(1e-12));
  CHECK(s.first == s.second);
}

TEST_CASE("outside-target distance and centre") {
  CHECK(outside_distance({10, 20, 30, 60}, 2) == 20);
  CHECK(center_outside_target({10, 20, 30, 60}, 2) == Point{20, 20});
  CHECK(outside_distance({0, 0, 4, 4}, 1) == 4);
  CHECK(center_outside_target({0, 0, 4, 4}, 1) == Point{2, -2});
  CHECK(center_outside_target({10, 20, 30, 60}, 4) == Point{20, 30});
}

TEST_CASE("ratio round-trips and translation invariance on random boxes") {
  Rng rng(3);
  for (int i = 0; i < 2000; ++i) {
    const BoundingBox b = oracle::random_box(rng, 500.0, 0.01);
    const double rs = 1.0 - rng.uniform();  // (0,1]
    const double rd = rng.uniform(0.05, 10.0);
    const auto [w, h] = patch_size_on_target(b, rs);
    CHECK(w == h);
    CHECK(rel_close(w * h / (b.width() * b.height()), rs, 1e-9));
    CHECK(rel_close(b.height() / outside_distance(b, rd), rd, 1e-9));
    const double dx = std::round(rng.uniform(-50, 50));
    const double dy = std::round(rng.uniform(-50, 50));
    const auto c0 = center_on_target(b);
    const auto c1 = center_on_target({b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy});
    CHECK(c1.first == doctest::Approx(c0.first + dx).epsilon(1e-12));
    CHECK(c1.second == doctest::Approx(c0.second + dy).epsilon(1e-12));
  }
}

TEST_CASE("mask rasterization") {
  SUBCASE("interior block") {
    const Mask m = build_mask(100, 100, {50, 50}, 10);
    CHECK(m.area() == 100);
    CHECK(m.row0 == 45);
    CHECK(m.col0 == 45);
    CHECK(m.contains(54, 54));
    CHECK_FALSE(m.contains(55, 54));
    CHECK_FALSE(m.contains(44, 50));
  }
  SUBCASE("clipped at the corner") {
    const Mask m = build_mask(100, 100, {0, 0}, 10);
    CHECK(m.rows == 5);
    CHECK(m.cols == 5);
    CHECK(m.area() == 25);
  }
  SUBCASE("fully off-image") {
    const Mask m = build_mask(100, 100, {-100, -100}, 10);
    CHECK(m.empty());
    CHECK(m.area() == 0);
  }
}

TEST_CASE("composite") {
  const Image x(3, 100, 100, 0.2);
  SUBCASE("empty mask is the identity") {
    const Mask m = build_mask(100, 100, {-100, -100}, 10);
    const Image p(3, m.extent, m.extent, 0.9);
    CHECK(composite(x, p, m) == x);
  }
  SUBCASE("mask covering the image replaces everything") {
    const Mask m = build_mask(100, 100, {50, 50}, 100);
    const Image p(3, 100, 100, 0.7);
    const Image out = composite(x, p, m);
    for (double v : out.data()) CHECK(v == 0.7);
  }
  SUBCASE("centred 10x10 block changes exactly 100 pixels") {
    const Mask m = build_mask(100, 100, {50, 50}, 10);
    const Image p(3, 10, 10, 0.9);
    const Image out = composite(x, p, m);
    int changed = 0;
    int kept = 0;
    for (int r = 0; r < 100; ++r) {
      for (int c = 0; c < 100; ++c) {
        if (out.at(0, r, c) == 0.9) ++changed;
        if (out.at(0, r, c) == 0.2) ++kept;
      }
    }
    CHECK(changed == 100);
    CHECK(kept == 9900);
  }
}

TEST_CASE("composite locality on random masks") {
  Rng rng(8);
  for (int t = 0; t < 50; ++t) {
    Image x(3, 40, 50);
    for (double& v : x.data()) v = rng.uniform();
    const Mask m = build_mask(40, 50, {rng.uniform(-10, 60), rng.uniform(-10, 50)}, rng.uniform(1, 30));
    Image p(3, m.extent, m.extent);
    for (double& v : p.data()) v = rng.uniform();
    const Image out = composite(x, p, m);
    for (int r = 0; r < 40; ++r) {
      for (int c = 0; c < 50; ++c) {
        if (m.contains(r, c)) continue;
        for (int k = 0; k < 3; ++k) REQUIRE(out.at(k, r, c) == x.at(k, r, c));
      }
    }
  }
}

TEST_CASE("apply_patch over several boxes") {
  const Image x(3, 100, 100, 0.2);
  const Patch p = constant_patch(10, 10, 0.9);
  const PlacementSpec spec{PlacementMode::OnTarget, 0.25, 1.0};
  const BoundingBox a{10, 10, 30, 30};
  const BoundingBox b{60, 60, 80, 80};
  SUBCASE("one box matches a single composite") {
    const std::vector<BoundingBox> boxes{a};
    const auto adv = apply_patch(x, p, spec, boxes);
    const auto pl = place(a, spec, 100, 100);
    const Image direct = composite(x, resample(p.pixels, pl.mask.extent, pl.mask.extent, Resampling::Bilinear), pl.mask);
    CHECK(adv.image == direct);
  }
  SUBCASE("disjoint boxes change the sum of both areas") {
    const std::vector<BoundingBox> boxes{a, b};
    const auto adv = apply_patch(x, p, spec, boxes);
    const auto ma = place(a, spec, 100, 100).mask;
    const auto mb = place(b, spec, 100, 100).mask;
    CHECK(count_differences(adv.image, x) == static_cast<int>(ma.area() + mb.area()));
  }
  SUBCASE("no boxes returns the image with a warning") {
    std::string warning;
    const Image out = place_all(x, p, spec, {}, Resampling::Bilinear, &warning);
    CHECK(out == x);
    CHECK_FALSE(warning.empty());
  }
}

TEST_CASE("derivative of a composited pixel equals the resampling weight") {
  Rng rng(21);
  Patch p = constant_patch(8, 8, 0.0);
  for (double& v : p.pixels.data()) v = rng.uniform(0.2, 0.8);
  const Image x(3, 64, 64, 0.3);
  const PlacementSpec spec{PlacementMode::OnTarget, 0.2, 1.0};
  const std::vector<BoundingBox> boxes{{10, 12, 40, 38}};
  const auto base = apply_patch(x, p, spec, boxes);
  const Mask& m = base.applications[0].placement.mask;
  const Resampler rr(8, m.extent, Resampling::Bilinear);
  const double h = 1e-6;
  for (int trial = 0; trial < 20; ++trial) {
    const int pi = rng.uniform_int(0, 7);
    const int pj = rng.uniform_int(0, 7);
    const int oi = rng.uniform_int(0, m.rows - 1);
    const int oj = rng.uniform_int(0, m.cols - 1);
    Patch hi = p;
    Patch lo = p;
    hi.pixels.at(1, pi, pj) += h;
    lo.pixels.at(1, pi, pj) -= h;
    const double fd = (apply_patch(x, hi, spec, boxes).image.at(1, m.row0 + oi, m.col0 + oj) -
                       apply_patch(x, lo, spec, boxes).image.at(1, m.row0 + oi, m.col0 + oj)) /
                      (2 * h);
    const int ri = m.row0 + oi - m.top;
    const int ci = m.col0 + oj - m.left;
    CHECK(fd == doctest::Approx(rr.weight(ri, pi) * rr.weight(ci, pj)).epsilon(1e-6));
  }
}

TEST_CASE("nearest resampling at scale 1 has unit derivative") {
  Patch p = constant_patch(10, 10, 0.5);
  const Image x(3, 64, 64, 0.3);
  const PlacementSpec spec{PlacementMode::OnTarget, 0.25, 1.0};
  const std::vector<BoundingBox> boxes{{10, 10, 30, 30}};
  const auto adv = apply_patch(x, p, spec, boxes, {}, Resampling::Nearest);
  const Mask& m = adv.applications[0].placement.mask;
  REQUIRE(m.extent == 10);
  Image g(3, 64, 64, 0.0);
  g.at(2, m.row0 + 3, m.col0 + 4) = 1.0;
  const Image gp = backprop_to_patch(adv, g);
  CHECK(gp.at(2, 3, 4) == 1.0);
  double total = 0;
  for (double v : gp.data()) total += v;
  CHECK(total == 1.0);
}

TEST_CASE("backprop_to_patch is the adjoint of apply_patch") {
  Rng rng(5);
  Patch p = constant_patch(12, 12, 0.0);
  for (double& v : p.pixels.data()) v = rng.uniform(0.1, 0.9);
  const Image x(3, 64, 64, 0.4);
  const PlacementSpec spec{PlacementMode::OnTarget, 0.3, 1.0};
  const std::vector<BoundingBox> boxes{{5, 5, 35, 30}, {30, 34, 60, 62}};
  const auto adv = apply_patch(x, p, spec, boxes);
  Image g(3, 64, 64);
  for (double& v : g.data()) v = rng.uniform(-1, 1);
  const Image gp = backprop_to_patch(adv, g);
  Image dir(3, 12, 12);
  for (double& v : dir.data()) v = rng.uniform(-1, 1);
  const double h = 1e-6;
  Patch hi = p;
  Patch lo = p;
  for (std::size_t i = 0; i < dir.size(); ++i) {
    hi.pixels.data()[i] += h * dir.data()[i];
    lo.pixels.data()[i] -= h * dir.data()[i];
  }
  const Image a = apply_patch(x, hi, spec, boxes).image;
  const Image b = apply_patch(x, lo, spec, boxes).image;
  double fd = 0;
  for (std::size_t i = 0; i < g.size(); ++i) fd += g.data()[i] * (a.data()[i] - b.data()[i]) / (2 * h);
  double an = 0;
  for (std::size_t i = 0; i < dir.size(); ++i) an += gp.data()[i] * dir.data()[i];
  CHECK(fd == doctest::Approx(an).epsilon(1e-6));
}

TEST_CASE("resampler identity at scale 1 and partition of unity") {
  const Resampler id(7, 7, Resampling::Bilinear);
  for (int i = 0; i < 7; ++i) {
    for (int j = 0; j < 7; ++j) CHECK(id.weight(i, j) == (i == j ? 1.0 : 0.0));
  }
  for (const auto& [in, out] : {std::pair{50, 13}, std::pair{8, 21}, std::pair{3, 2}}) {
    const Resampler r(in, out, Resampling::Bilinear);
    for (int i = 0; i < out; ++i) {
      double s = 0;
      for (int j = 0; j < in; ++j) s += r.weight(i, j);
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}
