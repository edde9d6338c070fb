#include "appa/losses.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace appa {

void validate_color_set(const PrintableColorSet& set) {
  if (set.colors.empty()) fail(ErrorKind::Invariant, "printable colour set is empty");
  for (std::size_t i = 0; i < set.colors.size(); ++i) {
    for (double v : set.colors[i]) {
      if (!(v >= 0.0 && v <= 1.0)) {
        fail(ErrorKind::Invariant, "printable colour " + std::to_string(i) + " has a component outside [0,1]");
      }
    }
  }
}

const PrintableColorSet& default_printable_colors() {
  static const PrintableColorSet set = [] {
    PrintableColorSet s;
    const double levels[3] = {0.1, 0.5, 0.9};
    for (double r : levels) {
      for (double g : levels) {
        for (double b : levels) s.colors.push_back({r, g, b});
      }
    }
    s.colors.push_back({0.3, 0.3, 0.3});
    s.colors.push_back({0.7, 0.7, 0.7});
    s.colors.push_back({0.95, 0.95, 0.95});
    return s;
  }();
  return set;
}

PrintableColorSet load_printable_colors(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Data, "cannot open printable colour file " + path.string());
  PrintableColorSet set;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    Rgb c{};
    std::string extra;
    if (!(ls >> c[0] >> c[1] >> c[2]) || (ls >> extra)) {
      fail(ErrorKind::Data, path.string() + ":" + std::to_string(lineno) + ": expected 'r g b'");
    }
    for (double v : c) {
      if (!(v >= 0.0 && v <= 1.0)) fail(ErrorKind::Data, path.string() + ":" + std::to_string(lineno) + ": value outside [0,1]");
    }
    set.colors.push_back(c);
  }
  validate_color_set(set);
  return set;
}

double objectness_loss(std::span<const Detection> detections) {
  if (detections.empty()) return 0.0;
  double sum = 0;
  for (const auto& d : detections) {
    if (!(d.objectness >= 0.0 && d.objectness <= 1.0)) fail(ErrorKind::Invariant, "objectness outside [0,1]");
    sum += d.objectness;
  }
  return sum / static_cast<double>(detections.size());
}

namespace {

void require_tv_size(const Image& p) {
  if (p.height() < 2 || p.width() < 2) fail(ErrorKind::Invariant, "tv_loss needs a patch of at least 2x2");
}

}  // namespace

double tv_loss(const Image& p, double eps) {
  require_tv_size(p);
  double sum = 0;
  for (int c = 0; c < p.channels(); ++c) {
    for (int i = 0; i + 1 < p.height(); ++i) {
      for (int j = 0; j + 1 < p.width(); ++j) {
        const double dy = p.at(c, i + 1, j) - p.at(c, i, j);
        const double dx = p.at(c, i, j + 1) - p.at(c, i, j);
        sum += std::sqrt(dy * dy + dx * dx + eps);
      }
    }
  }
  return sum / (double(p.height()) * p.width());
}

Image tv_loss_grad(const Image& p, double eps) {
  require_tv_size(p);
  Image g(p.channels(), p.height(), p.width());
  const double norm = 1.0 / (double(p.height()) * p.width());
  for (int c = 0; c < p.channels(); ++c) {
    for (int i = 0; i + 1 < p.height(); ++i) {
      for (int j = 0; j + 1 < p.width(); ++j) {
        const double dy = p.at(c, i + 1, j) - p.at(c, i, j);
        const double dx = p.at(c, i, j + 1) - p.at(c, i, j);
        const double s = std::sqrt(dy * dy + dx * dx + eps);
        if (s == 0.0) continue;
        g.at(c, i + 1, j) += norm * dy / s;
        g.at(c, i, j + 1) += norm * dx / s;
        g.at(c, i, j) -= norm * (dx + dy) / s;
      }
    }
  }
  return g;
}

namespace {

void require_rgb(const Image& p) {
  if (p.channels() != 3) fail(ErrorKind::Invariant, "nps_loss needs a 3-channel patch");
}

// Index of the nearest colour and the squared distance to it.
std::pair<std::size_t, double> nearest(const PrintableColorSet& colors, double r, double g, double b) {
  std::size_t best = 0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < colors.colors.size(); ++k) {
    const auto& c = colors.colors[k];
    const double d2 = (r - c[0]) * (r - c[0]) + (g - c[1]) * (g - c[1]) + (b - c[2]) * (b - c[2]);
    if (d2 < best_d2) {
      best_d2 = d2;
      best = k;
    }
  }
  return {best, best_d2};
}

}  // namespace

double nps_loss(const Image& p, const PrintableColorSet& colors) {
  require_rgb(p);
  if (colors.colors.empty()) fail(ErrorKind::Invariant, "printable colour set is empty");
  double sum = 0;
  for (int i = 0; i < p.height(); ++i) {
    for (int j = 0; j < p.width(); ++j) {
      sum += std::sqrt(nearest(colors, p.at(0, i, j), p.at(1, i, j), p.at(2, i, j)).second);
    }
  }
  return sum / (double(p.height()) * p.width());
}

Image nps_loss_grad(const Image& p, const PrintableColorSet& colors) {
  require_rgb(p);
  if (colors.colors.empty()) fail(ErrorKind::Invariant, "printable colour set is empty");
  Image g(3, p.height(), p.width());
  const double norm = 1.0 / (double(p.height()) * p.width());
  for (int i = 0; i < p.height(); ++i) {
    for (int j = 0; j < p.width(); ++j) {
      const double px[3] = {p.at(0, i, j), p.at(1, i, j), p.at(2, i, j)};
      const auto [k, d2] = nearest(colors, px[0], px[1], px[2]);
      if (d2 <= 0.0) continue;
      const double d = std::sqrt(d2);
      for (int c = 0; c < 3; ++c) g.at(c, i, j) = norm * (px[c] - colors.colors[k][c]) / d;
    }
  }
  return g;
}

double total_loss(double l_obj, double l_tv, double l_nps, const Hyperparameters& h) {
  return l_obj + h.alpha * l_tv + h.beta * l_nps;
}

LossBreakdown make_breakdown(double l_obj, double l_tv, double l_nps, int n_detections, const Hyperparameters& h) {
  return {l_obj, l_tv, l_nps, total_loss(l_obj, l_tv, l_nps, h), n_detections};
}

}  // namespace appa
