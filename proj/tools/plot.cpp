#include "plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

#include "appa/data_io.hpp"

namespace appa::plot {

namespace {

// 3x5 glyphs, one row per entry, bit 2 = leftmost column.
const std::map<char, std::array<int, 5>>& font() {
  static const std::map<char, std::array<int, 5>> f = {
      {'A', {2, 5, 7, 5, 5}}, {'B', {6, 5, 6, 5, 6}}, {'C', {3, 4, 4, 4, 3}}, {'D', {6, 5, 5, 5, 6}},
      {'E', {7, 4, 6, 4, 7}}, {'F', {7, 4, 6, 4, 4}}, {'G', {3, 4, 5, 5, 3}}, {'H', {5, 5, 7, 5, 5}},
      {'I', {7, 2, 2, 2, 7}}, {'J', {1, 1, 1, 5, 2}}, {'K', {5, 5, 6, 5, 5}}, {'L', {4, 4, 4, 4, 7}},
      {'M', {5, 7, 7, 5, 5}}, {'N', {6, 5, 5, 5, 5}}, {'O', {2, 5, 5, 5, 2}}, {'P', {6, 5, 6, 4, 4}},
      {'Q', {2, 5, 5, 6, 3}}, {'R', {6, 5, 6, 5, 5}}, {'S', {3, 4, 2, 1, 6}}, {'T', {7, 2, 2, 2, 2}},
      {'U', {5, 5, 5, 5, 7}}, {'V', {5, 5, 5, 5, 2}}, {'W', {5, 5, 7, 7, 5}}, {'X', {5, 5, 2, 5, 5}},
      {'Y', {5, 5, 2, 2, 2}}, {'Z', {7, 1, 2, 4, 7}}, {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}},
      {'2', {6, 1, 2, 4, 7}}, {'3', {6, 1, 2, 1, 6}}, {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 6, 1, 6}},
      {'6', {3, 4, 7, 5, 7}}, {'7', {7, 1, 1, 2, 2}}, {'8', {7, 5, 7, 5, 7}}, {'9', {7, 5, 7, 1, 6}},
      {'.', {0, 0, 0, 0, 2}}, {',', {0, 0, 0, 2, 4}}, {'-', {0, 0, 7, 0, 0}}, {'_', {0, 0, 0, 0, 7}},
      {':', {0, 2, 0, 2, 0}}, {'/', {1, 1, 2, 4, 4}}, {'%', {5, 1, 2, 4, 5}}, {'|', {2, 2, 2, 2, 2}},
      {'(', {1, 2, 2, 2, 1}}, {')', {4, 2, 2, 2, 4}}, {'=', {0, 7, 0, 7, 0}}, {'+', {0, 2, 7, 2, 0}},
  };
  return f;
}

constexpr int kMargin = 48;

Color blend(double t) {
  // White (0) to dark blue (1).
  t = std::clamp(t, 0.0, 1.0);
  return {1.0 - 0.85 * t, 1.0 - 0.7 * t, 1.0 - 0.35 * t};
}

}  // namespace

Color palette(std::size_t i) {
  static const Color colors[] = {{0.12, 0.47, 0.71}, {1.0, 0.5, 0.05}, {0.17, 0.63, 0.17}, {0.84, 0.15, 0.16},
                                 {0.58, 0.4, 0.74},  {0.55, 0.34, 0.29}, {0.89, 0.47, 0.76}, {0.5, 0.5, 0.5}};
  return colors[i % std::size(colors)];
}

Canvas::Canvas(int width, int height, Color background) : img_(3, height, width) {
  for (int c = 0; c < 3; ++c) std::fill(img_.plane(c).begin(), img_.plane(c).end(), background[c]);
}

void Canvas::pixel(int x, int y, const Color& c) {
  if (x < 0 || y < 0 || x >= width() || y >= height()) return;
  for (int k = 0; k < 3; ++k) img_.at(k, y, x) = c[k];
}

void Canvas::line(double x0, double y0, double x1, double y1, const Color& c, int thickness) {
  const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
  const int r = thickness / 2;
  for (int i = 0; i <= steps; ++i) {
    const double t = double(i) / steps;
    const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
    const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
    for (int dy = -r; dy <= r; ++dy) {
      for (int dx = -r; dx <= r; ++dx) pixel(x + dx, y + dy, c);
    }
  }
}

void Canvas::fill_rect(int x0, int y0, int x1, int y1, const Color& c) {
  for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y) {
    for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) pixel(x, y, c);
  }
}

void Canvas::outline_rect(int x0, int y0, int x1, int y1, const Color& c, int thickness) {
  line(x0, y0, x1, y0, c, thickness);
  line(x1, y0, x1, y1, c, thickness);
  line(x1, y1, x0, y1, c, thickness);
  line(x0, y1, x0, y0, c, thickness);
}

void Canvas::text(int x, int y, const std::string& s, const Color& c, int scale) {
  int cx = x;
  for (char ch : s) {
    const auto it = font().find(static_cast<char>(std::toupper(static_cast<unsigned char>(ch))));
    if (it != font().end()) {
      for (int row = 0; row < 5; ++row) {
        for (int col = 0; col < 3; ++col) {
          if (it->second[row] & (4 >> col)) fill_rect(cx + col * scale, y + row * scale, cx + (col + 1) * scale - 1,
                                                      y + (row + 1) * scale - 1, c);
        }
      }
    }
    cx += 4 * scale;
  }
}

void Canvas::save(const std::filesystem::path& path) const { write_png(path, img_); }

void line_chart(const std::filesystem::path& path, const std::vector<Series>& series, double x_min, double x_max,
                double y_min, double y_max, const std::string& title) {
  const int w = 640;
  const int h = 480;
  Canvas cv(w, h);
  const int left = kMargin;
  const int right = w - 16;
  const int top = 32;
  const int bottom = h - kMargin;
  if (!(x_max > x_min)) x_max = x_min + 1;
  if (!(y_max > y_min)) y_max = y_min + 1;
  auto px = [&](double x) { return left + (x - x_min) / (x_max - x_min) * (right - left); };
  auto py = [&](double y) { return bottom - (y - y_min) / (y_max - y_min) * (bottom - top); };
  const Color grid{0.88, 0.88, 0.88};
  for (int i = 1; i < 5; ++i) {
    cv.line(px(x_min + i * (x_max - x_min) / 5), top, px(x_min + i * (x_max - x_min) / 5), bottom, grid);
    cv.line(left, py(y_min + i * (y_max - y_min) / 5), right, py(y_min + i * (y_max - y_min) / 5), grid);
  }
  cv.outline_rect(left, top, right, bottom, {0, 0, 0});
  cv.text(left, 8, title, {0, 0, 0});
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", y_max);
  cv.text(4, top, buf, {0, 0, 0});
  std::snprintf(buf, sizeof buf, "%.3g", y_min);
  cv.text(4, bottom - 10, buf, {0, 0, 0});
  std::snprintf(buf, sizeof buf, "%.3g", x_min);
  cv.text(left, bottom + 6, buf, {0, 0, 0});
  std::snprintf(buf, sizeof buf, "%.3g", x_max);
  cv.text(right - 40, bottom + 6, buf, {0, 0, 0});
  for (std::size_t s = 0; s < series.size(); ++s) {
    const auto& ser = series[s];
    const Color c = palette(s);
    for (std::size_t i = 1; i < ser.x.size(); ++i) cv.line(px(ser.x[i - 1]), py(ser.y[i - 1]), px(ser.x[i]), py(ser.y[i]), c, 2);
    if (ser.x.size() == 1) cv.fill_rect(int(px(ser.x[0])) - 2, int(py(ser.y[0])) - 2, int(px(ser.x[0])) + 2, int(py(ser.y[0])) + 2, c);
    const int ly = bottom + 20 + static_cast<int>(s % 2) * 12;
    const int lx = left + static_cast<int>(s / 2) * 200;
    cv.fill_rect(lx, ly, lx + 10, ly + 8, c);
    cv.text(lx + 14, ly, ser.label.substr(0, 22), {0, 0, 0}, 1);
  }
  cv.save(path);
}

void heatmap(const std::filesystem::path& path, const std::vector<std::vector<double>>& values,
             const std::vector<std::vector<bool>>& highlight, const std::vector<std::string>& row_labels,
             const std::vector<std::string>& col_labels, const std::string& title) {
  const int rows = static_cast<int>(values.size());
  const int cols = rows ? static_cast<int>(values[0].size()) : 0;
  const int cell = 64;
  const int label_w = 120;
  const int top = 56;
  Canvas cv(label_w + std::max(1, cols) * cell + 16, top + std::max(1, rows) * cell + 16);
  cv.text(8, 8, title, {0, 0, 0});
  for (int c = 0; c < cols; ++c) cv.text(label_w + c * cell + 4, top - 14, col_labels[c].substr(0, 7), {0, 0, 0}, 2);
  for (int r = 0; r < rows; ++r) {
    cv.text(4, top + r * cell + cell / 2 - 5, row_labels[r].substr(0, 14), {0, 0, 0}, 2);
    for (int c = 0; c < cols; ++c) {
      const double v = values[r][c];
      const int x0 = label_w + c * cell;
      const int y0 = top + r * cell;
      if (std::isnan(v)) {
        cv.fill_rect(x0, y0, x0 + cell - 1, y0 + cell - 1, {0.8, 0.8, 0.8});
        cv.text(x0 + 20, y0 + 26, "N/A", {0, 0, 0});
        continue;
      }
      cv.fill_rect(x0, y0, x0 + cell - 1, y0 + cell - 1, blend(v));
      char buf[16];
      std::snprintf(buf, sizeof buf, "%.1f", v * 100);
      cv.text(x0 + 10, y0 + 26, buf, v > 0.55 ? Color{1, 1, 1} : Color{0, 0, 0});
      if (r < static_cast<int>(highlight.size()) && c < static_cast<int>(highlight[r].size()) && highlight[r][c]) {
        cv.outline_rect(x0 + 1, y0 + 1, x0 + cell - 2, y0 + cell - 2, {0.85, 0.1, 0.1}, 3);
      }
    }
  }
  cv.save(path);
}

void bar_chart(const std::filesystem::path& path, const std::vector<double>& values, const std::string& title) {
  const int bar = 14;
  const int w = std::max(320, 2 * kMargin + static_cast<int>(values.size()) * (bar + 4));
  const int h = 360;
  Canvas cv(w, h);
  const int bottom = h - kMargin;
  const int top = 32;
  cv.text(kMargin, 8, title, {0, 0, 0});
  cv.line(kMargin, bottom, w - kMargin, bottom, {0, 0, 0});
  cv.line(kMargin, top, kMargin, bottom, {0, 0, 0});
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int x0 = kMargin + 4 + static_cast<int>(i) * (bar + 4);
    const int y0 = bottom - static_cast<int>(std::lround(std::clamp(values[i], 0.0, 1.0) * (bottom - top)));
    cv.fill_rect(x0, y0, x0 + bar - 1, bottom - 1, palette(0));
  }
  cv.save(path);
}

}  // namespace appa::plot
