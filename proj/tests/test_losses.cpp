#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "appa/losses.hpp"
#include "appa/rng.hpp"

using namespace appa;

namespace {

Detection det(double score) {
  Detection d;
  d.box = {0, 0, 1, 1};
  d.objectness = score;
  return d;
}

Image random_image(Rng& rng, int c, int h, int w) {
  Image img(c, h, w);
  for (double& v : img.data()) v = rng.uniform();
  return img;
}

double rel_err(double a, double b) {
  const double scale = std::max(std::abs(a), std::abs(b));
  return scale < 1e-12 ? 0.0 : std::abs(a - b) / scale;
}

}  // namespace

TEST_CASE("objectness loss worked values") {
  CHECK(objectness_loss(std::vector<Detection>{det(0.9), det(0.7)}) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(objectness_loss(std::vector<Detection>{}) == 0.0);
  CHECK(objectness_loss(std::vector<Detection>{det(0.4)}) == 0.4);
}

TEST_CASE("objectness loss is permutation invariant and monotone") {
  Rng rng(1);
  for (int t = 0; t < 50; ++t) {
    std::vector<Detection> d;
    const int n = rng.uniform_int(1, 12);
    for (int i = 0; i < n; ++i) d.push_back(det(rng.uniform()));
    const double base = objectness_loss(d);
    std::vector<Detection> rev(d.rbegin(), d.rend());
    CHECK(objectness_loss(rev) == doctest::Approx(base).epsilon(1e-14));
    d.push_back(det(std::min(1.0, base + 0.01 + rng.uniform() * (1 - base))));
    if (d.back().objectness > base) CHECK(objectness_loss(d) > base);
  }
}

TEST_CASE("tv loss worked values") {
  SUBCASE("constant patch gives sum of sqrt(eps) over interior") {
    const Image p(3, 5, 5, 0.3);
    const double expected = 3 * 4 * 4 * std::sqrt(kTvEpsilon) / 25.0;
    CHECK(tv_loss(p) == doctest::Approx(expected).epsilon(1e-12));
  }
  SUBCASE("single stripe 2x2 with eps 0") {
    Image p(1, 2, 2, 0.0);
    p.at(0, 0, 1) = 1.0;
    p.at(0, 1, 1) = 1.0;
    CHECK(tv_loss(p, 0.0) == 0.25);
  }
  SUBCASE("checkerboard beats any constant") {
    Image p(3, 6, 6);
    for (int k = 0; k < 3; ++k) {
      for (int r = 0; r < 6; ++r) {
        for (int c = 0; c < 6; ++c) p.at(k, r, c) = (r + c) % 2;
      }
    }
    for (double v : {0.0, 0.5, 1.0}) CHECK(tv_loss(p) > tv_loss(Image(3, 6, 6, v)));
  }
  SUBCASE("cyclic shift of a vertical stripe pattern keeps the loss") {
    Image a(1, 4, 4, 0.0);
    Image b(1, 4, 4, 0.0);
    for (int r = 0; r < 4; ++r) {
      a.at(0, r, 1) = 1.0;
      b.at(0, r, 2) = 1.0;
    }
    CHECK(tv_loss(a, 0.0) == tv_loss(b, 0.0));
  }
}

TEST_CASE("nps loss worked values") {
  const PrintableColorSet bw{{{0, 0, 0}, {0.5, 0.5, 0.5}, {1, 1, 1}}};
  SUBCASE("grey pixel distance") {
    const Image p(3, 1, 1, 0.4);
    CHECK(nps_loss(p, bw) == doctest::Approx(std::sqrt(0.03)).epsilon(1e-12));
  }
  SUBCASE("members of the set cost nothing") {
    Image p(3, 2, 2, 0.0);
    for (int k = 0; k < 3; ++k) {
      p.at(k, 0, 1) = 0.5;
      p.at(k, 1, 0) = 1.0;
    }
    CHECK(nps_loss(p, bw) == 0.0);
  }
  SUBCASE("nonzero when a pixel is not a member") {
    Image p(3, 2, 2, 0.0);
    p.at(1, 1, 1) = 0.001;
    CHECK(nps_loss(p, bw) > 0.0);
  }
  SUBCASE("removing a colour never decreases the loss") {
    Rng rng(3);
    const auto& full = default_printable_colors();
    for (int t = 0; t < 20; ++t) {
      const Image p = random_image(rng, 3, 4, 4);
      PrintableColorSet smaller = full;
      smaller.colors.erase(smaller.colors.begin() + rng.uniform_int(0, int(smaller.colors.size()) - 1));
      CHECK(nps_loss(p, smaller) >= nps_loss(p, full));
    }
  }
}

TEST_CASE("default gamut is valid and has 30 colours") {
  CHECK(default_printable_colors().colors.size() == 30);
  CHECK_NOTHROW(validate_color_set(default_printable_colors()));
  CHECK_THROWS_AS(validate_color_set(PrintableColorSet{}), Error);
}

TEST_CASE("printable colour files") {
  const auto path = std::filesystem::temp_directory_path() / "appa_colors_test.txt";
  {
    std::ofstream os(path);
    os << "# gamut\n0 0 0\n\n1 0.5 0.25\n";
  }
  const auto set = load_printable_colors(path);
  REQUIRE(set.colors.size() == 2);
  CHECK(set.colors[1] == Rgb{1, 0.5, 0.25});
  {
    std::ofstream os(path);
    os << "0 0 2\n";
  }
  CHECK_THROWS_AS(load_printable_colors(path), Error);
  std::filesystem::remove(path);
}

TEST_CASE("analytic tv and nps gradients match central differences") {
  Rng rng(2024);
  const auto& colors = default_printable_colors();
  const double h = 1e-5;
  for (int t = 0; t < 10; ++t) {
    Image p = random_image(rng, 3, 8, 8);
    const Image gtv = tv_loss_grad(p);
    const Image gnps = nps_loss_grad(p, colors);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double v = p.data()[i];
      p.data()[i] = v + h;
      const double tv_hi = tv_loss(p);
      const double nps_hi = nps_loss(p, colors);
      p.data()[i] = v - h;
      const double tv_lo = tv_loss(p);
      const double nps_lo = nps_loss(p, colors);
      p.data()[i] = v;
      CHECK(rel_err((tv_hi - tv_lo) / (2 * h), gtv.data()[i]) < 1e-4);
      CHECK(rel_err((nps_hi - nps_lo) / (2 * h), gnps.data()[i]) < 1e-4);
    }
  }
}

TEST_CASE("total loss combination") {
  const Hyperparameters h;
  CHECK(total_loss(0.8, 0.02, 0.3, h) == doctest::Approx(0.853).epsilon(1e-12));
  CHECK(total_loss(0, 0, 0, h) == 0.0);
  Hyperparameters zero = h;
  zero.alpha = 0;
  zero.beta = 0;
  CHECK(total_loss(0.37, 0.5, 0.9, zero) == 0.37);
  const auto b = make_breakdown(0.8, 0.02, 0.3, 4, h);
  CHECK(std::abs(b.total - (b.l_obj + h.alpha * b.l_tv + h.beta * b.l_nps)) < 1e-9);
  CHECK(b.n_detections == 4);
}
